#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dim/dataset.hpp"
#include "dim/nn.hpp"
#include "dim/objectives.hpp"

namespace dim {

struct TrainConfig {
    std::size_t epochs = 60;
    double base_lr = 0.3;  // 0.02 for the part-based run, 0.00005 for transfer
    double decay_factor = 10.0;
    std::size_t decay_epoch = 40;
    std::size_t batch_size = 32;
    ObjectiveConfig objective;
    bool share_discriminators = true;
    std::uint64_t seed = 0;
    // Pause training after this epoch count and return a resumable
    // checkpoint; the schedule and history stay those of the full run.
    std::optional<std::size_t> stop_epoch;

    void validate() const;
};

// base_lr before decay_epoch, base_lr / decay_factor at and after it.
// Epochs are 0-based.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

struct EpochRecord {
    std::size_t epoch;
    double ce_loss;       // classification term (0 in transfer finetuning)
    double dim_loss;      // info-max term: sum over parts for the local model
    double jsd_estimate;  // mean over parts for the local model
    double lr;
};
using TrainHistory = std::vector<EpochRecord>;

enum class Arch { Global, Part };

// Full training state: everything needed to resume bitwise or to evaluate.
struct Checkpoint {
    Arch arch = Arch::Global;
    GlobalEncoderConfig global_cfg;
    PartEncoderConfig part_cfg;
    DiscriminatorConfig disc_cfg;
    bool share_discriminators = true;
    PairInput pair_input = PairInput::Summary;

    std::optional<GlobalEncoder> global_enc;
    std::optional<PartEncoder> part_enc;
    std::vector<DimDiscriminator> discs;

    TrainConfig train;  // snapshot of the run's config
    std::size_t epoch = 0;
    Rng rng;  // training stream state at the save point

    std::vector<TensorPtr> encoder_parameters() const;
    std::vector<TensorPtr> discriminator_parameters() const;
    std::vector<StateBlock> state_blocks();
    // Embedding used for retrieval: z for the global model, the
    // concatenation of the part embeddings for the part model. Eval mode.
    std::vector<std::vector<double>> embed(const std::vector<std::vector<double>>& rows);
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
};

// Joint SGD over encoder and discriminator on ce + beta * dim per batch.
// With beta == 0 the pair/discriminator path is never touched and the run
// reduces to the plain classification baseline. Pass `resume` to continue
// a saved run up to cfg.epochs; history covers the epochs run in this call.
TrainResult train_global_dim(const Dataset& ds, const GlobalEncoderConfig& enc_cfg,
                             const DiscriminatorConfig& disc_cfg, const TrainConfig& cfg,
                             const Checkpoint* resume = nullptr);

// Part variant: part cross-entropy plus lambda * sum of per-part info-max
// losses. One batch disruption is drawn per step and shared by all parts;
// all parts see the same summary u. share_discriminators selects one
// discriminator for every part versus one per part.
TrainResult train_local_dim(const Dataset& ds, const PartEncoderConfig& enc_cfg,
                            const DiscriminatorConfig& disc_cfg, const TrainConfig& cfg,
                            const Checkpoint* resume = nullptr);

struct TransferResult {
    Checkpoint checkpoint;
    TrainHistory history;
    double jsd_target_pre = 0.0;   // held-out target estimate before finetuning
    double jsd_target_post = 0.0;  // and after
};

// Three-step transfer: encoder weights come from the source checkpoint, the
// discriminator is re-initialized for the target domain, and finetuning
// minimizes the info-max loss alone (no labels exist or are read; the
// classification head receives no gradient). Batchnorm running statistics
// adapt to the target as a side effect of train-mode passes.
TransferResult tf_dim(const Checkpoint& source, const UnlabeledSet& target_train,
                      const UnlabeledSet& target_eval, const TrainConfig& cfg);

// Info-max bound estimate of a checkpointed model over a feature set:
// eval-mode encodings, one shifted disruption per part, mean across parts.
double eval_jsd(Checkpoint& ckpt, const UnlabeledSet& set, std::size_t shift = 1);

// Self-describing container: text header (format version, architecture,
// config snapshot, named block shapes), raw little-endian doubles for every
// block in declaration order, then the generator state. Byte layout is
// documented in docs/checkpoint-format.md. load(save(c)) is bitwise exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// FNV-1a over all state block bytes; convenient for change detection.
std::string checkpoint_param_hash(Checkpoint& ckpt);

}  // namespace dim
