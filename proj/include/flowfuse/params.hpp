#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "flowfuse/autodiff.hpp"
#include "flowfuse/random.hpp"

namespace flowfuse {

using Matrix = Eigen::MatrixXd;

/// Named trainable tensors plus their Adam moment estimates. Entries keep a
/// stable address for the lifetime of the store.
class ParamStore {
public:
    struct Entry {
        std::string name;
        ad::Tensor tensor;
        Matrix first_moment;
        Matrix second_moment;
    };

    ParamStore() = default;
    ParamStore(ParamStore&&) = default;
    ParamStore& operator=(ParamStore&&) = default;
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    /// Register a trainable tensor; duplicate names throw std::logic_error.
    ad::Tensor& add(std::string name, Matrix init);

    ad::Tensor& at(std::string_view name);
    const ad::Tensor& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    /// Total number of scalar parameters.
    std::size_t scalar_count() const;

    Entry& entry(std::size_t i) { return *entries_[i]; }
    const Entry& entry(std::size_t i) const { return *entries_[i]; }

    std::int64_t step() const { return step_; }
    void advance_step() { ++step_; }

    void clear_grads();
    std::vector<ad::Tensor*> tensors();

    /// Parameter values in registration order.
    std::vector<Matrix> values() const;
    void assign_values(const std::vector<Matrix>& values);

private:
    std::vector<std::unique_ptr<Entry>> entries_;
    std::int64_t step_ = 0;
};

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out);

}  // namespace flowfuse
