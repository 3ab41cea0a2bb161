#include "dim/training.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace dim {

void TrainConfig::validate() const {
    if (epochs > 0 && decay_epoch >= epochs) {
        throw ConfigError("train: decay_epoch " + std::to_string(decay_epoch) +
                          " must be < epochs " + std::to_string(epochs));
    }
    if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
    if (!(decay_factor > 0.0)) throw ConfigError("train: decay_factor must be positive");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    objective.validate();
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    return epoch < cfg.decay_epoch ? cfg.base_lr : cfg.base_lr / cfg.decay_factor;
}

std::vector<TensorPtr> Checkpoint::encoder_parameters() const {
    if (arch == Arch::Global) return global_enc->parameters();
    return part_enc->parameters();
}

std::vector<TensorPtr> Checkpoint::discriminator_parameters() const {
    std::vector<TensorPtr> out;
    for (const auto& d : discs) {
        auto p = d.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<StateBlock> Checkpoint::state_blocks() {
    std::vector<StateBlock> out =
        arch == Arch::Global ? global_enc->state_blocks() : part_enc->state_blocks();
    for (std::size_t i = 0; i < discs.size(); ++i) {
        auto b = discs[i].state_blocks("disc." + std::to_string(i));
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

std::vector<std::vector<double>> Checkpoint::embed(
    const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out;
    if (rows.empty()) return out;
    auto x = from_rows(rows);
    Rng unused(0);  // eval-mode passes draw nothing
    out.reserve(rows.size());
    if (arch == Arch::Global) {
        auto enc_out = global_enc->encode(x, Mode::Eval, unused);
        const std::size_t dz = enc_out.z->shape[1];
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.emplace_back(enc_out.z->data.begin() + i * dz,
                             enc_out.z->data.begin() + (i + 1) * dz);
        }
    } else {
        auto enc_out = part_enc->encode(x, Mode::Eval, unused);
        const std::size_t dz = part_cfg.d_z;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::vector<double> e;
            e.reserve(dz * enc_out.z.size());
            for (const auto& zm : enc_out.z) {
                e.insert(e.end(), zm->data.begin() + i * dz,
                         zm->data.begin() + (i + 1) * dz);
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

namespace {

Checkpoint clone_checkpoint(const Checkpoint& src_const) {
    auto& src = const_cast<Checkpoint&>(src_const);  // read-only block access
    Checkpoint dst;
    dst.arch = src.arch;
    dst.global_cfg = src.global_cfg;
    dst.part_cfg = src.part_cfg;
    dst.disc_cfg = src.disc_cfg;
    dst.share_discriminators = src.share_discriminators;
    dst.pair_input = src.pair_input;
    dst.train = src.train;
    dst.epoch = src.epoch;
    dst.rng = src.rng;
    if (src.global_enc) dst.global_enc = GlobalEncoder::init(src.global_cfg, std::uint64_t{0});
    if (src.part_enc) dst.part_enc = PartEncoder::init(src.part_cfg, std::uint64_t{0});
    for (std::size_t i = 0; i < src.discs.size(); ++i) {
        dst.discs.push_back(DimDiscriminator::init(src.disc_cfg, std::uint64_t{0}));
    }
    auto sb = src.state_blocks();
    auto db = dst.state_blocks();
    for (std::size_t i = 0; i < sb.size(); ++i) *db[i].data = *sb[i].data;
    return dst;
}

struct BatchView {
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
};

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.uniform_int(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

// Batches in shuffled order; a trailing batch of one is dropped (train-mode
// batchnorm needs two rows).
template <typename GetRow>
std::vector<BatchView> make_batches(std::size_t n, std::size_t batch_size, Rng& rng,
                                    GetRow&& get) {
    auto order = shuffled_indices(n, rng);
    std::vector<BatchView> out;
    for (std::size_t b = 0; b < n; b += batch_size) {
        const std::size_t len = std::min(batch_size, n - b);
        if (len < 2) break;
        BatchView bv;
        bv.features.reserve(len);
        bv.labels.reserve(len);
        for (std::size_t i = 0; i < len; ++i) get(order[b + i], bv);
        out.push_back(std::move(bv));
    }
    return out;
}

[[noreturn]] void rethrow_with_context(const NumericError& e, std::size_t epoch,
                                       std::size_t batch) {
    throw NumericError("epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + ": " + e.what());
}

}  // namespace

TrainResult train_global_dim(const Dataset& ds, const GlobalEncoderConfig& enc_cfg,
                             const DiscriminatorConfig& disc_cfg, const TrainConfig& cfg,
                             const Checkpoint* resume) {
    cfg.validate();
    if (ds.train.empty()) throw ConfigError("training: dataset has an empty train split");

    Checkpoint ck;
    if (resume) {
        if (resume->arch != Arch::Global) {
            throw ConfigError("training: checkpoint architecture is not the global model");
        }
        ck = clone_checkpoint(*resume);
    } else {
        Rng master(cfg.seed);
        Rng init_rng = master.split();
        Rng train_rng = master.split();
        ck.arch = Arch::Global;
        ck.global_cfg = enc_cfg;
        ck.disc_cfg = disc_cfg;
        ck.share_discriminators = true;
        ck.pair_input = cfg.objective.pair_input;
        ck.global_enc = GlobalEncoder::init(enc_cfg, init_rng);
        ck.discs.push_back(DimDiscriminator::init(disc_cfg, init_rng));
        ck.rng = train_rng;
    }
    ck.train = cfg;

    auto& enc = *ck.global_enc;
    auto& disc = ck.discs[0];
    const auto& obj_cfg = cfg.objective;
    const bool use_dim = obj_cfg.beta > 0.0;
    const std::size_t n = ds.train.size();

    TrainHistory history;
    for (std::size_t epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        auto batches = make_batches(n, cfg.batch_size, ck.rng, [&](std::size_t i, BatchView& bv) {
            bv.features.push_back(ds.train[i].features);
            bv.labels.push_back(ds.train[i].identity);
        });
        if (batches.empty()) {
            throw ConfigError("training: no batch of size >= 2 can be formed");
        }
        double ce_sum = 0.0, dim_sum = 0.0, jsd_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            try {
                const auto& bv = batches[b];
                auto x = from_rows(bv.features);
                auto out = enc.encode(x, Mode::Train, ck.rng);
                auto ce = cross_entropy(out.logits, bv.labels);
                TensorPtr objective = ce;
                double dim_v = 0.0, jsd_v = 0.0;
                if (use_dim) {
                    const auto& side = obj_cfg.pair_input == PairInput::Summary ? out.u : out.z;
                    PairBatch pb = obj_cfg.sampling == Sampling::Random
                                       ? pair_random(side, out.z, ck.rng)
                                       : pair_labeled(side, out.z, bv.labels, ck.rng);
                    auto dl = dim_loss(disc, pb, obj_cfg.alpha,
                                       obj_cfg.adversarial_discriminator);
                    dim_v = dl->value();
                    jsd_v = jsd_estimate(disc, pb);
                    objective = global_objective(ce, dl, obj_cfg.beta);
                }
                backward(objective);
                auto params = enc.parameters();
                if (use_dim) {
                    auto dp = disc.parameters();
                    params.insert(params.end(), dp.begin(), dp.end());
                }
                sgd_step(with_grads(params), lr);

                const auto bs = static_cast<double>(bv.features.size());
                ce_sum += ce->value() * bs;
                dim_sum += dim_v * bs;
                jsd_sum += jsd_v * bs;
                seen += bv.features.size();
            } catch (const NumericError& e) {
                rethrow_with_context(e, epoch, b);
            }
        }
        const auto inv = 1.0 / static_cast<double>(seen);
        history.push_back({epoch, ce_sum * inv, dim_sum * inv, jsd_sum * inv, lr});
        ck.epoch = epoch + 1;
        if (cfg.stop_epoch && ck.epoch >= *cfg.stop_epoch) break;
    }
    return {std::move(ck), std::move(history)};
}

TrainResult train_local_dim(const Dataset& ds, const PartEncoderConfig& enc_cfg,
                            const DiscriminatorConfig& disc_cfg, const TrainConfig& cfg,
                            const Checkpoint* resume) {
    cfg.validate();
    if (ds.train.empty()) throw ConfigError("training: dataset has an empty train split");

    Checkpoint ck;
    if (resume) {
        if (resume->arch != Arch::Part) {
            throw ConfigError("training: checkpoint architecture is not the part model");
        }
        ck = clone_checkpoint(*resume);
    } else {
        Rng master(cfg.seed);
        Rng init_rng = master.split();
        Rng train_rng = master.split();
        ck.arch = Arch::Part;
        ck.part_cfg = enc_cfg;
        ck.disc_cfg = disc_cfg;
        ck.share_discriminators = cfg.share_discriminators;
        ck.pair_input = cfg.objective.pair_input;
        ck.part_enc = PartEncoder::init(enc_cfg, init_rng);
        const std::size_t n_discs = cfg.share_discriminators ? 1 : enc_cfg.num_parts;
        for (std::size_t i = 0; i < n_discs; ++i) {
            ck.discs.push_back(DimDiscriminator::init(disc_cfg, init_rng));
        }
        ck.rng = train_rng;
    }
    ck.train = cfg;

    auto& enc = *ck.part_enc;
    const auto& obj_cfg = cfg.objective;
    const bool use_dim = obj_cfg.lambda > 0.0;
    const std::size_t n = ds.train.size();
    const std::size_t parts = enc.cfg.num_parts;

    TrainHistory history;
    for (std::size_t epoch = ck.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        auto batches = make_batches(n, cfg.batch_size, ck.rng, [&](std::size_t i, BatchView& bv) {
            bv.features.push_back(ds.train[i].features);
            bv.labels.push_back(ds.train[i].identity);
        });
        if (batches.empty()) {
            throw ConfigError("training: no batch of size >= 2 can be formed");
        }
        double ce_sum = 0.0, dim_sum = 0.0, jsd_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            try {
                const auto& bv = batches[b];
                auto x = from_rows(bv.features);
                auto out = enc.encode(x, Mode::Train, ck.rng);
                auto pce = part_cross_entropy(out.logits, bv.labels);
                TensorPtr objective = pce;
                double dim_v = 0.0, jsd_v = 0.0;
                if (use_dim) {
                    // one disruption per step, shared by every part
                    std::vector<std::size_t> neg_idx;
                    std::size_t shift = 0;
                    if (obj_cfg.sampling == Sampling::Random) {
                        shift = draw_shift(bv.features.size(), ck.rng);
                    } else {
                        neg_idx = labeled_neg_indices(bv.labels, ck.rng);
                    }
                    std::vector<TensorPtr> dim_terms;
                    dim_terms.reserve(parts);
                    for (std::size_t m = 0; m < parts; ++m) {
                        const auto& side =
                            obj_cfg.pair_input == PairInput::Summary ? out.u : out.z[m];
                        PairBatch pb = obj_cfg.sampling == Sampling::Random
                                           ? pair_shifted(side, out.z[m], shift)
                                           : pair_from_indices(side, out.z[m], neg_idx);
                        const auto& d = ck.discs[ck.share_discriminators ? 0 : m];
                        dim_terms.push_back(dim_loss(d, pb, obj_cfg.alpha,
                                                     obj_cfg.adversarial_discriminator));
                        dim_v += dim_terms.back()->value();
                        jsd_v += jsd_estimate(d, pb);
                    }
                    jsd_v /= static_cast<double>(parts);
                    objective = local_objective(pce, dim_terms, obj_cfg.lambda);
                }
                backward(objective);
                auto params = enc.parameters();
                if (use_dim) {
                    auto dp = ck.discriminator_parameters();
                    params.insert(params.end(), dp.begin(), dp.end());
                }
                sgd_step(with_grads(params), lr);

                const auto bs = static_cast<double>(bv.features.size());
                ce_sum += pce->value() * bs;
                dim_sum += dim_v * bs;
                jsd_sum += jsd_v * bs;
                seen += bv.features.size();
            } catch (const NumericError& e) {
                rethrow_with_context(e, epoch, b);
            }
        }
        const auto inv = 1.0 / static_cast<double>(seen);
        history.push_back({epoch, ce_sum * inv, dim_sum * inv, jsd_sum * inv, lr});
        ck.epoch = epoch + 1;
        if (cfg.stop_epoch && ck.epoch >= *cfg.stop_epoch) break;
    }
    return {std::move(ck), std::move(history)};
}

double eval_jsd(Checkpoint& ckpt, const UnlabeledSet& set, std::size_t shift) {
    if (set.features.size() < 2) {
        throw DomainError("eval_jsd: need at least two samples");
    }
    auto x = from_rows(set.features);
    Rng unused(0);
    if (ckpt.arch == Arch::Global) {
        auto out = ckpt.global_enc->encode(x, Mode::Eval, unused);
        const auto& side = ckpt.pair_input == PairInput::Summary ? out.u : out.z;
        return jsd_estimate(ckpt.discs[0], pair_shifted(side, out.z, shift));
    }
    auto out = ckpt.part_enc->encode(x, Mode::Eval, unused);
    double total = 0.0;
    for (std::size_t m = 0; m < out.z.size(); ++m) {
        const auto& side = ckpt.pair_input == PairInput::Summary ? out.u : out.z[m];
        const auto& d = ckpt.discs[ckpt.share_discriminators ? 0 : m];
        total += jsd_estimate(d, pair_shifted(side, out.z[m], shift));
    }
    return total / static_cast<double>(out.z.size());
}

TransferResult tf_dim(const Checkpoint& source, const UnlabeledSet& target_train,
                      const UnlabeledSet& target_eval, const TrainConfig& cfg) {
    cfg.validate();
    if (target_train.features.empty()) {
        throw ConfigError("transfer: target train set is empty");
    }
    const std::size_t d_in = source.arch == Arch::Global ? source.global_cfg.d_in
                                                         : source.part_cfg.d_in;
    if (target_train.features[0].size() != d_in) {
        throw ShapeError("transfer: source encoder expects input dim " +
                         std::to_string(d_in) + ", target provides " +
                         std::to_string(target_train.features[0].size()));
    }

    Checkpoint ck = clone_checkpoint(source);
    Rng master(cfg.seed);
    Rng init_rng = master.split();
    Rng train_rng = master.split();
    // fresh discriminators for the target domain; encoder weights carry over
    for (auto& d : ck.discs) d = DimDiscriminator::init(ck.disc_cfg, init_rng);
    ck.rng = train_rng;
    ck.epoch = 0;
    ck.train = cfg;

    TransferResult result;
    result.jsd_target_pre = eval_jsd(ck, target_eval);

    const auto& obj_cfg = cfg.objective;
    const std::size_t n = target_train.features.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        auto batches = make_batches(n, cfg.batch_size, ck.rng, [&](std::size_t i, BatchView& bv) {
            bv.features.push_back(target_train.features[i]);
        });
        if (batches.empty()) {
            throw ConfigError("transfer: no batch of size >= 2 can be formed");
        }
        double dim_sum = 0.0, jsd_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            try {
                const auto& bv = batches[b];
                auto x = from_rows(bv.features);
                TensorPtr objective;
                double dim_v = 0.0, jsd_v = 0.0;
                if (ck.arch == Arch::Global) {
                    auto out = ck.global_enc->encode(x, Mode::Train, ck.rng);
                    const auto& side =
                        ck.pair_input == PairInput::Summary ? out.u : out.z;
                    auto pb = pair_random(side, out.z, ck.rng);
                    objective = dim_loss(ck.discs[0], pb, obj_cfg.alpha,
                                         obj_cfg.adversarial_discriminator);
                    dim_v = objective->value();
                    jsd_v = jsd_estimate(ck.discs[0], pb);
                } else {
                    auto out = ck.part_enc->encode(x, Mode::Train, ck.rng);
                    const std::size_t shift = draw_shift(bv.features.size(), ck.rng);
                    TensorPtr total;
                    for (std::size_t m = 0; m < out.z.size(); ++m) {
                        const auto& side =
                            ck.pair_input == PairInput::Summary ? out.u : out.z[m];
                        auto pb = pair_shifted(side, out.z[m], shift);
                        const auto& d = ck.discs[ck.share_discriminators ? 0 : m];
                        auto dl = dim_loss(d, pb, obj_cfg.alpha,
                                           obj_cfg.adversarial_discriminator);
                        dim_v += dl->value();
                        jsd_v += jsd_estimate(d, pb);
                        total = total ? add(total, dl) : dl;
                    }
                    jsd_v /= static_cast<double>(out.z.size());
                    objective = total;
                }
                backward(objective);
                auto params = ck.encoder_parameters();
                auto dp = ck.discriminator_parameters();
                params.insert(params.end(), dp.begin(), dp.end());
                sgd_step(with_grads(params), lr);

                const auto bs = static_cast<double>(bv.features.size());
                dim_sum += dim_v * bs;
                jsd_sum += jsd_v * bs;
                seen += bv.features.size();
            } catch (const NumericError& e) {
                rethrow_with_context(e, epoch, b);
            }
        }
        const auto inv = 1.0 / static_cast<double>(seen);
        result.history.push_back({epoch, 0.0, dim_sum * inv, jsd_sum * inv, lr});
        ck.epoch = epoch + 1;
    }
    result.jsd_target_post = eval_jsd(ck, target_eval);
    result.checkpoint = std::move(ck);
    return result;
}

// ---- persistence ------------------------------------------------------------

namespace {

const char* kMagic = "dim-checkpoint v1";

std::string sampling_name(Sampling s) {
    return s == Sampling::Random ? "random" : "labeled";
}
std::string pair_input_name(PairInput p) {
    return p == PairInput::Summary ? "summary" : "embedding";
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream is(s);
    std::string cell;
    while (std::getline(is, cell, ',')) {
        if (!cell.empty()) out.push_back(std::stoull(cell));
    }
    return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt_const, const std::string& path) {
    auto& ckpt = const_cast<Checkpoint&>(ckpt_const);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint file " + path);

    f << kMagic << '\n';
    f << "arch = " << (ckpt.arch == Arch::Global ? "global" : "part") << '\n';
    f << "epoch = " << ckpt.epoch << '\n';
    f << "pair_input = " << pair_input_name(ckpt.pair_input) << '\n';
    f << "share_discriminators = " << (ckpt.share_discriminators ? 1 : 0) << '\n';
    f << "num_discriminators = " << ckpt.discs.size() << '\n';
    if (ckpt.arch == Arch::Global) {
        const auto& c = ckpt.global_cfg;
        f << "enc.d_in = " << c.d_in << '\n';
        f << "enc.backbone_hidden = " << join_sizes(c.backbone_hidden) << '\n';
        f << "enc.d_u = " << c.d_u << '\n';
        f << "enc.d_z = " << c.d_z << '\n';
        f << "enc.num_classes = " << c.num_classes << '\n';
        f << "enc.dropout_rate = " << fmt_double(c.dropout_rate) << '\n';
        f << "enc.leaky_slope = " << fmt_double(c.leaky_slope) << '\n';
    } else {
        const auto& c = ckpt.part_cfg;
        f << "enc.d_in = " << c.d_in << '\n';
        f << "enc.backbone_hidden = " << join_sizes(c.backbone_hidden) << '\n';
        f << "enc.map_positions = " << c.map_positions << '\n';
        f << "enc.map_channels = " << c.map_channels << '\n';
        f << "enc.num_parts = " << c.num_parts << '\n';
        f << "enc.d_z = " << c.d_z << '\n';
        f << "enc.num_classes = " << c.num_classes << '\n';
        f << "enc.dropout_rate = " << fmt_double(c.dropout_rate) << '\n';
        f << "enc.leaky_slope = " << fmt_double(c.leaky_slope) << '\n';
    }
    const auto& dc = ckpt.disc_cfg;
    f << "disc.input_dim = " << dc.input_dim << '\n';
    f << "disc.h1 = " << dc.h1 << '\n';
    f << "disc.h2 = " << dc.h2 << '\n';
    f << "disc.h3 = " << dc.h3 << '\n';
    const auto& tc = ckpt.train;
    f << "train.epochs = " << tc.epochs << '\n';
    f << "train.base_lr = " << fmt_double(tc.base_lr) << '\n';
    f << "train.decay_factor = " << fmt_double(tc.decay_factor) << '\n';
    f << "train.decay_epoch = " << tc.decay_epoch << '\n';
    f << "train.batch_size = " << tc.batch_size << '\n';
    f << "train.seed = " << tc.seed << '\n';
    f << "train.alpha = " << fmt_double(tc.objective.alpha) << '\n';
    f << "train.beta = " << fmt_double(tc.objective.beta) << '\n';
    f << "train.lambda = " << fmt_double(tc.objective.lambda) << '\n';
    f << "train.sampling = " << sampling_name(tc.objective.sampling) << '\n';
    f << "train.adversarial = " << (tc.objective.adversarial_discriminator ? 1 : 0) << '\n';

    auto blocks = ckpt.state_blocks();
    std::size_t total_bytes = 0;
    for (auto& b : blocks) {
        f << "block " << b.name << ' ' << b.shape.size();
        for (auto d : b.shape) f << ' ' << d;
        f << '\n';
        total_bytes += b.data->size() * sizeof(double);
    }
    f << "data " << total_bytes << '\n';
    for (auto& b : blocks) {
        f.write(reinterpret_cast<const char*>(b.data->data()),
                static_cast<std::streamsize>(b.data->size() * sizeof(double)));
    }
    const auto rs = ckpt.rng.save_state();
    f << "\nrng " << rs.s[0] << ' ' << rs.s[1] << ' ' << rs.s[2] << ' ' << rs.s[3] << ' '
      << (rs.has_spare ? 1 : 0) << ' ' << rs.spare_bits << '\n';
    f << "end\n";
    if (!f) throw IoError("failed writing checkpoint file " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint file " + path);
    std::string line;
    if (!std::getline(f, line) || line != kMagic) {
        throw IoError(path + ": checkpoint version mismatch (expected '" +
                      std::string(kMagic) + "', got '" + line + "')");
    }

    Checkpoint ck;
    std::string arch;
    std::size_t num_discs = 1;
    std::vector<std::pair<std::string, Shape>> file_blocks;
    std::size_t data_bytes = 0;

    auto kv = [&](const std::string& l, std::string& key, std::string& val) {
        const auto eq = l.find(" = ");
        if (eq == std::string::npos) {
            throw IoError(path + ": malformed checkpoint header line '" + l + "'");
        }
        key = l.substr(0, eq);
        val = l.substr(eq + 3);
    };

    bool saw_data = false;
    while (std::getline(f, line)) {
        if (line.rfind("block ", 0) == 0) {
            std::istringstream is(line);
            std::string tag, name;
            std::size_t rank;
            is >> tag >> name >> rank;
            Shape shape(rank);
            for (auto& d : shape) is >> d;
            if (!is) throw IoError(path + ": malformed block line '" + line + "'");
            file_blocks.emplace_back(name, std::move(shape));
            continue;
        }
        if (line.rfind("data ", 0) == 0) {
            data_bytes = std::stoull(line.substr(5));
            saw_data = true;
            break;
        }
        std::string key, val;
        kv(line, key, val);
        if (key == "arch") arch = val;
        else if (key == "epoch") ck.epoch = std::stoull(val);
        else if (key == "pair_input")
            ck.pair_input = val == "summary" ? PairInput::Summary : PairInput::Embedding;
        else if (key == "share_discriminators") ck.share_discriminators = val == "1";
        else if (key == "num_discriminators") num_discs = std::stoull(val);
        else if (key == "enc.d_in") { ck.global_cfg.d_in = ck.part_cfg.d_in = std::stoull(val); }
        else if (key == "enc.backbone_hidden") {
            ck.global_cfg.backbone_hidden = ck.part_cfg.backbone_hidden = split_sizes(val);
        }
        else if (key == "enc.d_u") ck.global_cfg.d_u = std::stoull(val);
        else if (key == "enc.d_z") { ck.global_cfg.d_z = ck.part_cfg.d_z = std::stoull(val); }
        else if (key == "enc.num_classes") {
            ck.global_cfg.num_classes = ck.part_cfg.num_classes = std::stoull(val);
        }
        else if (key == "enc.dropout_rate") {
            ck.global_cfg.dropout_rate = ck.part_cfg.dropout_rate = std::stod(val);
        }
        else if (key == "enc.leaky_slope") {
            ck.global_cfg.leaky_slope = ck.part_cfg.leaky_slope = std::stod(val);
        }
        else if (key == "enc.map_positions") ck.part_cfg.map_positions = std::stoull(val);
        else if (key == "enc.map_channels") ck.part_cfg.map_channels = std::stoull(val);
        else if (key == "enc.num_parts") ck.part_cfg.num_parts = std::stoull(val);
        else if (key == "disc.input_dim") ck.disc_cfg.input_dim = std::stoull(val);
        else if (key == "disc.h1") ck.disc_cfg.h1 = std::stoull(val);
        else if (key == "disc.h2") ck.disc_cfg.h2 = std::stoull(val);
        else if (key == "disc.h3") ck.disc_cfg.h3 = std::stoull(val);
        else if (key == "train.epochs") ck.train.epochs = std::stoull(val);
        else if (key == "train.base_lr") ck.train.base_lr = std::stod(val);
        else if (key == "train.decay_factor") ck.train.decay_factor = std::stod(val);
        else if (key == "train.decay_epoch") ck.train.decay_epoch = std::stoull(val);
        else if (key == "train.batch_size") ck.train.batch_size = std::stoull(val);
        else if (key == "train.seed") ck.train.seed = std::stoull(val);
        else if (key == "train.alpha") ck.train.objective.alpha = std::stod(val);
        else if (key == "train.beta") ck.train.objective.beta = std::stod(val);
        else if (key == "train.lambda") ck.train.objective.lambda = std::stod(val);
        else if (key == "train.sampling")
            ck.train.objective.sampling = val == "random" ? Sampling::Random : Sampling::Labeled;
        else if (key == "train.adversarial")
            ck.train.objective.adversarial_discriminator = val == "1";
        else throw IoError(path + ": unknown checkpoint header key '" + key + "'");
    }
    if (!saw_data) throw IoError(path + ": corrupt checkpoint, missing data section");

    if (arch == "global") {
        ck.arch = Arch::Global;
        ck.global_enc = GlobalEncoder::init(ck.global_cfg, std::uint64_t{0});
    } else if (arch == "part") {
        ck.arch = Arch::Part;
        ck.part_enc = PartEncoder::init(ck.part_cfg, std::uint64_t{0});
    } else {
        throw IoError(path + ": unknown architecture '" + arch + "'");
    }
    for (std::size_t i = 0; i < num_discs; ++i) {
        ck.discs.push_back(DimDiscriminator::init(ck.disc_cfg, std::uint64_t{0}));
    }
    ck.train.objective.pair_input = ck.pair_input;
    ck.train.share_discriminators = ck.share_discriminators;

    auto blocks = ck.state_blocks();
    if (blocks.size() != file_blocks.size()) {
        throw IoError(path + ": checkpoint lists " + std::to_string(file_blocks.size()) +
                      " blocks, architecture has " + std::to_string(blocks.size()));
    }
    std::size_t expect_bytes = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i].name != file_blocks[i].first ||
            blocks[i].shape != file_blocks[i].second) {
            throw ShapeError(path + ": block '" + file_blocks[i].first + "' " +
                             shape_str(file_blocks[i].second) +
                             " does not match architecture block '" + blocks[i].name +
                             "' " + shape_str(blocks[i].shape));
        }
        expect_bytes += blocks[i].data->size() * sizeof(double);
    }
    if (expect_bytes != data_bytes) {
        throw IoError(path + ": corrupt length, header says " + std::to_string(data_bytes) +
                      " bytes, blocks need " + std::to_string(expect_bytes));
    }
    for (auto& b : blocks) {
        f.read(reinterpret_cast<char*>(b.data->data()),
               static_cast<std::streamsize>(b.data->size() * sizeof(double)));
        if (f.gcount() != static_cast<std::streamsize>(b.data->size() * sizeof(double))) {
            throw IoError(path + ": corrupt length, truncated parameter data in block '" +
                          b.name + "'");
        }
    }
    if (!std::getline(f, line) || !line.empty()) {
        throw IoError(path + ": corrupt checkpoint after data section");
    }
    if (!std::getline(f, line) || line.rfind("rng ", 0) != 0) {
        throw IoError(path + ": corrupt checkpoint, missing rng state");
    }
    {
        std::istringstream is(line.substr(4));
        Rng::State st{};
        int spare_flag = 0;
        is >> st.s[0] >> st.s[1] >> st.s[2] >> st.s[3] >> spare_flag >> st.spare_bits;
        if (!is) throw IoError(path + ": malformed rng state");
        st.has_spare = spare_flag != 0;
        ck.rng = Rng::from_state(st);
    }
    if (!std::getline(f, line) || line != "end") {
        throw IoError(path + ": corrupt checkpoint, missing end marker");
    }
    return ck;
}

std::string checkpoint_param_hash(Checkpoint& ckpt) {
    std::string bytes;
    for (auto& b : ckpt.state_blocks()) {
        const char* p = reinterpret_cast<const char*>(b.data->data());
        bytes.append(p, b.data->size() * sizeof(double));
    }
    return fnv1a_hex(bytes);
}

}  // namespace dim
