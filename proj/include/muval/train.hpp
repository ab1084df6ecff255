#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "muval/autodiff.hpp"
#include "muval/model.hpp"
#include "muval/optim.hpp"
#include "muval/preprocess.hpp"
#include "muval/volume.hpp"

namespace muval {

struct TrainConfig {
    double lr0 = 1e-4;
    double gamma = 0.99;        // per-epoch exponential decay
    int batch_size = 10;
    int max_epochs = 60;
    int patience = 40;          // epochs without improvement before stopping
    AdamWConfig adamw;
    std::uint64_t seed = 0;
    double val_fraction = 0.2;  // stratified split of the training set
    bool augment = true;
    PreprocessConfig aug_cfg;

    void validate() const {
        if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("decay gamma must be in (0,1]");
        if (patience < 1) throw ConfigError("patience must be at least 1");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
        if (max_epochs < 1) throw ConfigError("max epochs must be at least 1");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw ConfigError("validation fraction must be in [0,1)");
    }
};

enum class StopReason { MaxEpochs, EarlyStop };

inline const char* to_string(StopReason r) {
    return r == StopReason::MaxEpochs ? "max-epochs" : "early-stop";
}

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;  // NaN entries when no validation split exists
    std::vector<double> lr;
    int best_epoch = -1;
    StopReason stop_reason = StopReason::MaxEpochs;

    int epochs() const { return static_cast<int>(train_loss.size()); }
};

// CSV export with header `epoch,train_loss,val_loss,lr`.
inline void save_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open history CSV for writing: " + path);
    os << "epoch,train_loss,val_loss,lr\n";
    os.precision(17);
    for (int e = 0; e < h.epochs(); ++e)
        os << e << "," << h.train_loss[static_cast<std::size_t>(e)] << ","
           << h.val_loss[static_cast<std::size_t>(e)] << "," << h.lr[static_cast<std::size_t>(e)]
           << "\n";
    if (!os) throw FormatError("history CSV write failed: " + path);
}

// --- checkpoint format -------------------------------------------------------
// magic MVCK 0x00 0x01, u32 tensor count; per tensor: u16 name length, name
// bytes, u8 rank, u32 extents, f32 little-endian payload. Parameters come
// first, then batch-norm running statistics, in model walk order.

inline constexpr unsigned char kCheckpointMagic[6] = {'M', 'V', 'C', 'K', 0x00, 0x01};

template <class F>
void save_checkpoint(const ParamSet<F>& params, const BufferSet<F>& buffers,
                     const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path);
    os.write(reinterpret_cast<const char*>(kCheckpointMagic), 6);
    detail::write_u32le(os, static_cast<std::uint32_t>(params.size() + buffers.size()));
    auto write_set = [&os](const ParamSet<F>& set) {
        for (std::size_t i = 0; i < set.size(); ++i) {
            const std::string& name = set.names()[i];
            const Tensor<F>& t = set.value(i);
            const std::uint16_t len = static_cast<std::uint16_t>(name.size());
            const unsigned char lb[2] = {static_cast<unsigned char>(len & 0xff),
                                         static_cast<unsigned char>(len >> 8)};
            os.write(reinterpret_cast<const char*>(lb), 2);
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            const unsigned char rank = static_cast<unsigned char>(t.rank());
            os.write(reinterpret_cast<const char*>(&rank), 1);
            for (int a = 0; a < t.rank(); ++a)
                detail::write_u32le(os, static_cast<std::uint32_t>(t.shape()[static_cast<std::size_t>(a)]));
            for (std::int64_t j = 0; j < t.numel(); ++j)
                detail::write_f32le(os, static_cast<float>(t[j]));
        }
    };
    write_set(params);
    write_set(buffers);
    if (!os) throw FormatError("checkpoint write failed: " + path);
}

// All named tensors from a checkpoint, in file order.
inline std::vector<std::pair<std::string, Tensor<float>>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path);
    unsigned char magic[6];
    if (!is.read(reinterpret_cast<char*>(magic), 6) ||
        std::memcmp(magic, kCheckpointMagic, 6) != 0)
        throw FormatError("bad checkpoint magic in " + path);
    std::uint32_t count;
    if (!detail::read_u32le(is, count)) throw FormatError("truncated checkpoint header in " + path);
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        unsigned char lb[2];
        if (!is.read(reinterpret_cast<char*>(lb), 2))
            throw FormatError("truncated checkpoint (name length) in " + path);
        const std::uint16_t len = static_cast<std::uint16_t>(lb[0] | (lb[1] << 8));
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("truncated checkpoint (name) in " + path);
        unsigned char rank;
        if (!is.read(reinterpret_cast<char*>(&rank), 1))
            throw FormatError("truncated checkpoint (rank) in " + path);
        Shape shape(rank);
        for (int a = 0; a < rank; ++a) {
            std::uint32_t e;
            if (!detail::read_u32le(is, e))
                throw FormatError("truncated checkpoint (extents) in " + path);
            shape[static_cast<std::size_t>(a)] = static_cast<int>(e);
        }
        Tensor<float> t(shape);
        for (std::int64_t j = 0; j < t.numel(); ++j)
            if (!detail::read_f32le(is, t[j]))
                throw FormatError("truncated checkpoint payload for tensor " + name + " in " + path);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

// Loads a checkpoint into a model, verifying that the file's tensors match
// the model's parameter and buffer structure exactly.
template <class F>
void load_checkpoint_into(MuvalModel<F>& model, const std::string& path) {
    auto tensors = load_checkpoint(path);
    std::size_t expected = model.params().size() + model.buffers().size();
    if (tensors.size() != expected)
        throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(expected));
    for (auto& [name, t] : tensors) {
        ParamSet<F>* target = nullptr;
        if (model.params().contains(name)) target = &model.params();
        else if (model.buffers().contains(name)) target = &model.buffers();
        else throw FormatError("checkpoint tensor " + name + " has no place in this model configuration");
        Tensor<F>& dst = target->at(name);
        if (t.shape() != dst.shape())
            throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) +
                              ", model expects " + shape_str(dst.shape()));
        for (std::int64_t j = 0; j < t.numel(); ++j) dst[j] = static_cast<F>(t[j]);
    }
}

// --- training ----------------------------------------------------------------

template <class F>
struct TrainResult {
    ParamSet<F> best_params;
    BufferSet<F> best_buffers;
    TrainHistory history;
};

namespace detail {

// Mean loss over samples in eval mode (running statistics, no augmentation).
template <class F>
double dataset_loss(MuvalModel<F>& model, const std::vector<Sample>& samples,
                    const std::vector<std::size_t>& idx, int batch_size) {
    double total = 0.0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Volume*> vols;
        std::vector<int> labels;
        for (std::size_t q = start; q < end; ++q) {
            vols.push_back(&samples[idx[q]].volume);
            labels.push_back(samples[idx[q]].label);
        }
        Tape<F> tape(false);
        auto fwd = model.forward(tape, model.make_batch(vols), &labels, false);
        total += static_cast<double>(tape.value(fwd.loss)[0]) * static_cast<double>(end - start);
    }
    return total / static_cast<double>(idx.size());
}

}  // namespace detail

// R0 probability for each sample, evaluated in eval mode.
template <class F>
std::vector<double> score_samples(MuvalModel<F>& model, const std::vector<Sample>& samples,
                                  int batch_size = 10) {
    std::vector<double> scores;
    scores.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Volume*> vols;
        for (std::size_t q = start; q < end; ++q) vols.push_back(&samples[q].volume);
        Tape<F> tape(false);
        auto fwd = model.forward(tape, model.make_batch(vols), nullptr, false);
        const Tensor<F>& probs = tape.value(fwd.probs);
        for (std::size_t q = 0; q < end - start; ++q)
            scores.push_back(static_cast<double>(probs.at2(static_cast<int>(q), 1)));
    }
    return scores;
}

// Full training run: seeded stratified validation split, per-epoch shuffling,
// per-batch augmentation, AdamW with exponential lr decay, early stopping on
// the monitored loss (validation loss, or the epoch training loss when the
// validation fraction is zero). Returns the best-epoch parameters and running
// statistics. Deterministic in (samples, cfg, model_cfg).
template <class F = float>
TrainResult<F> train(const std::vector<Sample>& samples, const TrainConfig& cfg,
                     const ModelConfig& model_cfg) {
    cfg.validate();
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < samples.size(); ++i)
        (samples[i].label == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty())
        throw ConfigError("training requires both classes in the training set");

    // Stratified split; shuffle order is seeded and class-wise.
    std::vector<std::size_t> train_idx, val_idx;
    for (auto* cls : {&pos, &neg}) {
        Rng rng(seed_combine(cfg.seed, 0x5011d, cls == &pos ? 1 : 0));
        std::vector<std::size_t>& v = *cls;
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        const std::size_t n_val =
            static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(v.size()) + 0.5));
        if (v.size() - n_val < 2)
            throw ConfigError("need at least 2 samples per class after the validation split");
        for (std::size_t i = 0; i < v.size(); ++i)
            (i < n_val ? val_idx : train_idx).push_back(v[i]);
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    const bool has_val = !val_idx.empty();

    MuvalModel<F> model(model_cfg, seed_combine(cfg.seed, 0x1217));
    AdamW<F> opt(cfg.adamw);

    TrainResult<F> result;
    TrainHistory& hist = result.history;
    double best_monitor = std::numeric_limits<double>::infinity();
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = lr_schedule(cfg.lr0, cfg.gamma, epoch);
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng(seed_combine(cfg.seed, 0xe90c4, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Volume> augmented;
            std::vector<const Volume*> vols;
            std::vector<int> labels;
            augmented.reserve(end - start);
            for (std::size_t q = start; q < end; ++q) {
                const Sample& s = samples[order[q]];
                if (cfg.augment) {
                    augmented.push_back(augment(
                        s.volume, cfg.aug_cfg,
                        seed_combine(seed_combine(cfg.seed, 0xa06, static_cast<std::uint64_t>(epoch)),
                                     static_cast<std::uint64_t>(order[q]))));
                } else {
                    augmented.push_back(s.volume);
                }
                labels.push_back(s.label);
            }
            for (const auto& v : augmented) vols.push_back(&v);

            Tape<F> tape(true);
            auto fwd = model.forward(tape, model.make_batch(vols), &labels, true);
            GradRecord<F> grads = tape.backward(fwd.loss);
            if (!std::isfinite(grads.loss)) throw NumericError("non-finite training loss");
            opt.step(model.params(), grads, lr);
            epoch_loss += grads.loss * static_cast<double>(end - start);
        }
        epoch_loss /= static_cast<double>(order.size());

        const double val =
            has_val ? detail::dataset_loss(model, samples, val_idx, cfg.batch_size)
                    : std::numeric_limits<double>::quiet_NaN();
        hist.train_loss.push_back(epoch_loss);
        hist.val_loss.push_back(val);
        hist.lr.push_back(lr);

        const double monitored = has_val ? val : epoch_loss;
        if (monitored < best_monitor) {
            best_monitor = monitored;
            hist.best_epoch = epoch;
            since_best = 0;
            result.best_params = model.params();
            result.best_buffers = model.buffers();
        } else {
            ++since_best;
            if (since_best >= cfg.patience) {
                hist.stop_reason = StopReason::EarlyStop;
                return result;
            }
        }
    }
    hist.stop_reason = StopReason::MaxEpochs;
    return result;
}

}  // namespace muval
