#include "rnd/optim.hpp"

#include <cmath>

#include "rnd/errors.hpp"

namespace rnd::optim {

void AdamW::add(const std::string& prefix, const std::vector<nn::Param<float>*>& params) {
    for (auto* p : params) {
        slots_.push_back({prefix + p->name, p, std::vector<float>(p->size(), 0.0f), std::vector<float>(p->size(), 0.0f)});
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(cfg_.beta1);
    const float b2 = static_cast<float>(cfg_.beta2);
    const float decay = static_cast<float>(1.0 - cfg_.lr * cfg_.weight_decay);
    const float step_size = static_cast<float>(cfg_.lr / bc1);
    const float inv_bc2 = static_cast<float>(1.0 / bc2);
    const float eps = static_cast<float>(cfg_.eps);
    for (auto& s : slots_) {
        if (!s.param->trainable) continue;
        auto& w = s.param->value;
        const auto& g = s.param->grad;
        for (std::size_t i = 0; i < w.size(); ++i) {
            s.m[i] = b1 * s.m[i] + (1.0f - b1) * g[i];
            s.v[i] = b2 * s.v[i] + (1.0f - b2) * g[i] * g[i];
            const float denom = std::sqrt(s.v[i] * inv_bc2) + eps;
            w[i] = w[i] * decay - step_size * s.m[i] / denom;
        }
    }
}

void AdamW::zero_grad() {
    for (auto& s : slots_) s.param->zero_grad();
}

std::vector<std::string> AdamW::names() const {
    std::vector<std::string> out;
    for (const auto& s : slots_) out.push_back(s.name);
    return out;
}

void AdamW::store(WeightArchive& archive) const {
    for (const auto& s : slots_) {
        archive.add(s.name + ".adam_m", s.param->shape, s.m);
        archive.add(s.name + ".adam_v", s.param->shape, s.v);
    }
}

void AdamW::restore(const WeightArchive& archive, std::int64_t steps) {
    for (auto& s : slots_) {
        for (auto [suffix, dst] : {std::pair{".adam_m", &s.m}, std::pair{".adam_v", &s.v}}) {
            const auto* rec = archive.find(s.name + suffix);
            if (!rec) throw ConfigError("checkpoint missing optimizer state " + s.name + suffix);
            if (rec->data.size() != dst->size()) throw ConfigError("optimizer state shape mismatch for " + s.name);
            *dst = rec->data;
        }
    }
    t_ = steps;
}

}  // namespace rnd::optim
