#include "flowfuse/params.hpp"

#include <cmath>
#include <stdexcept>

namespace flowfuse {

ad::Tensor& ParamStore::add(std::string name, Matrix init) {
    if (contains(name)) throw std::logic_error("parameter '" + name + "' registered twice");
    auto e = std::make_unique<Entry>();
    e->name = std::move(name);
    e->first_moment = Matrix::Zero(init.rows(), init.cols());
    e->second_moment = Matrix::Zero(init.rows(), init.cols());
    e->tensor = ad::Tensor(std::move(init), true);
    entries_.push_back(std::move(e));
    return entries_.back()->tensor;
}

ad::Tensor& ParamStore::at(std::string_view name) {
    for (auto& e : entries_)
        if (e->name == name) return e->tensor;
    throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const ad::Tensor& ParamStore::at(std::string_view name) const {
    return const_cast<ParamStore*>(this)->at(name);
}

bool ParamStore::contains(std::string_view name) const {
    for (const auto& e : entries_)
        if (e->name == name) return true;
    return false;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e->tensor.value.size());
    return n;
}

void ParamStore::clear_grads() {
    for (auto& e : entries_) e->tensor.clear_grad();
}

std::vector<ad::Tensor*> ParamStore::tensors() {
    std::vector<ad::Tensor*> out;
    out.reserve(entries_.size());
    for (auto& e : entries_) out.push_back(&e->tensor);
    return out;
}

std::vector<Matrix> ParamStore::values() const {
    std::vector<Matrix> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e->tensor.value);
    return out;
}

void ParamStore::assign_values(const std::vector<Matrix>& values) {
    if (values.size() != entries_.size())
        throw std::invalid_argument("assign_values: expected " + std::to_string(entries_.size()) +
                                    " tensors, got " + std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto& t = entries_[i]->tensor;
        if (values[i].rows() != t.rows() || values[i].cols() != t.cols())
            throw std::invalid_argument("assign_values: shape mismatch for '" + entries_[i]->name + "'");
        t.value = values[i];
    }
}

Matrix glorot_uniform(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
    return w;
}

}  // namespace flowfuse
