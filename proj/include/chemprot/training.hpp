#pragma once

// Minibatch training loop shared by the neural relation models.

#include <algorithm>
#include <span>
#include <vector>

#include "chemprot/neural.hpp"
#include "chemprot/random.hpp"

namespace chemprot {

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_f1 = 0.0;
};

namespace detail {

inline std::vector<nn::Matrix> snapshot(std::span<nn::Parameter* const> params) {
    std::vector<nn::Matrix> out;
    out.reserve(params.size());
    for (const nn::Parameter* p : params) out.push_back(p->value);
    return out;
}

inline void restore(std::span<nn::Parameter* const> params, const std::vector<nn::Matrix>& values) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = values[k];
}

/// Shuffled epochs; gradients averaged over each batch, optionally clipped
/// to a global norm, then one Adam step. Keeps the parameters of the epoch
/// with the best dev micro-F1 and stops after `patience` epochs without
/// improvement. Without a dev set every epoch runs and the last one is kept.
template <class Step, class Evaluate>
std::vector<EpochLog> train_minibatch(std::size_t n, int epochs, int batch_size, int patience,
                                      std::span<nn::Parameter* const> all_params,
                                      std::span<nn::Parameter* const> trainable, nn::AdamState& adam,
                                      double clip_norm, Rng& shuffle_rng, Step&& step, Evaluate&& evaluate,
                                      bool has_dev) {
    std::vector<EpochLog> log;
    std::vector<nn::Matrix> best = snapshot(all_params);
    double best_f1 = -1.0;
    int since_best = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
            nn::zero_grads(all_params);
            for (std::size_t k = start; k < end; ++k) total += step(order[k]);
            nn::scale_grads(all_params, 1.0 / static_cast<double>(end - start));
            if (clip_norm > 0) nn::clip_global_norm(trainable, clip_norm);
            nn::adam_update(trainable, adam);
        }
        EpochLog entry{epoch, total / static_cast<double>(std::max<std::size_t>(n, 1)), 0.0};
        bool stop = false;
        if (has_dev) {
            entry.dev_f1 = evaluate();
            if (entry.dev_f1 > best_f1) {
                best_f1 = entry.dev_f1;
                best = snapshot(all_params);
                since_best = 0;
            } else {
                stop = ++since_best >= patience;
            }
        }
        log.push_back(entry);
        if (stop) break;
    }
    if (has_dev) restore(all_params, best);
    nn::zero_grads(all_params);
    return log;
}

}  // namespace detail
}  // namespace chemprot
