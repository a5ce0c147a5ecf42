#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rnd/model.hpp"
#include "rnd/nn/tensor.hpp"

namespace rnd::optim {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
};

/// Adam with decoupled weight decay. Parameters are registered under a
/// prefix so moments of equally named tensors from different networks can
/// be told apart when checkpointing.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void add(const std::string& prefix, const std::vector<nn::Param<float>*>& params);

    /// Updates every registered trainable parameter from its gradient, then
    /// leaves gradients untouched (callers zero them).
    void step();
    void zero_grad();

    std::int64_t steps() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    std::vector<std::string> names() const;

    /// Moments stored as "<prefix><name>.adam_m" / ".adam_v".
    void store(WeightArchive& archive) const;
    void restore(const WeightArchive& archive, std::int64_t steps);

private:
    struct Slot {
        std::string name;
        nn::Param<float>* param;
        std::vector<float> m;
        std::vector<float> v;
    };
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace rnd::optim
