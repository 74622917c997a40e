#include "skdan/harness.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <thread>

#include "skdan/adam.hpp"
#include "skdan/io_util.hpp"

namespace skdan {

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
}

// Endless shuffled stream over a dataset, reshuffled each pass.
class BatchStream {
public:
    BatchStream(std::size_t n, Rng rng) : rng_(rng), idx_(n) {
        for (std::size_t i = 0; i < n; ++i) idx_[i] = i;
        shuffle_indices(idx_, rng_);
    }

    std::size_t next() {
        if (pos_ == idx_.size()) {
            shuffle_indices(idx_, rng_);
            pos_ = 0;
        }
        return idx_[pos_++];
    }

private:
    Rng rng_;
    std::vector<std::size_t> idx_;
    std::size_t pos_ = 0;
};

SkdanModel build_model(const HyperConfig& hp, const AblationFlags& flags, std::uint64_t seed) {
    SadConfig sad;
    sad.d_model = hp.d_model;
    sad.n_heads = hp.n_heads;
    sad.n_layers = hp.n_attention_layers;
    sad.pe_base_10000 = hp.pe_base_10000;
    sad.use_attention = !flags.disable_attention;
    sad.use_distillation = !flags.disable_distillation;
    PredictorConfig pred;
    pred.kernel_size = hp.kernel_size;
    pred.conv1_channels = hp.conv1_channels;
    pred.conv2_channels = hp.conv2_channels;
    pred.fnn_width = hp.fnn_width;
    pred.dropout_rate = hp.dropout_rate;
    pred.gamma_noise = hp.gamma_noise;
    pred.use_cnn = !flags.fnn_predictor;
    return init_model(sad, pred, seed);
}

}  // namespace

FitResult fit(const DomainDataset& source, const DomainDataset& target, const HyperConfig& hp,
              const AblationFlags& flags, const DomainDataset* validation) {
    hp.validate();
    if (source.samples.empty()) throw DataError("fit: empty source domain");
    if (!source.labeled) throw DataError("fit: source domain must be labeled");

    LossWeights weights;
    weights.lambda_mmd = flags.disable_adaptation ? 0.0 : hp.lambda_mmd;
    weights.beta_smooth = flags.disable_smoothness ? 0.0 : hp.beta_smooth;
    const bool want_mmd = weights.lambda_mmd > 0.0;
    if (want_mmd && target.samples.empty())
        throw DataError("fit: empty target domain with adaptation enabled");

    Rng master(hp.seed);
    FitResult result;
    result.model = build_model(hp, flags, master.split(hash_tag("init")).next_u64());
    Rng shuffle_rng = master.split(hash_tag("shuffle"));
    Rng target_rng = master.split(hash_tag("target"));
    Rng step_rng = master.split(hash_tag("steps"));

    auto params = model_parameters(result.model);
    AdamState adam = AdamState::init(params, hp.learning_rate);
    BatchStream target_stream(target.samples.size(), target_rng);

    std::vector<std::size_t> order(source.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    SkdanModel best_model = result.model;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
        shuffle_indices(order, shuffle_rng);
        EpochTrace trace;
        trace.epoch = epoch;
        std::size_t steps = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hp.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
            std::vector<const ChargeSegment*> src_batch, tgt_batch;
            for (std::size_t i = start; i < stop; ++i)
                src_batch.push_back(&source.samples[order[i]]);
            if (want_mmd)
                for (std::size_t i = start; i < stop; ++i)
                    tgt_batch.push_back(&target.samples[target_stream.next()]);

            Tape tape;
            ModelVars mv = lift_model(tape, result.model, true);
            LossBreakdown bd;
            Var total =
                overall_loss(tape, mv, result.model, src_batch, tgt_batch, weights, step_rng, &bd);
            for (const auto& [name, value] :
                 {std::pair<const char*, double>{"prediction", bd.pre},
                  {"mk-mmd", bd.mmd},
                  {"smoothness", bd.smooth}})
                if (!std::isfinite(value))
                    throw NumericError("fit: non-finite " + std::string(name) +
                                       " loss at epoch " + std::to_string(epoch));
            tape.backward(total);

            // Parameter leaves occupy ids [0, params.size()) in
            // model_parameters order; lift_model created them first.
            std::vector<const Tensor*> grads;
            grads.reserve(params.size());
            for (std::size_t i = 0; i < params.size(); ++i)
                grads.push_back(&tape.grad(static_cast<int>(i)));
            adam_step(params, grads, adam);

            trace.pre += bd.pre;
            trace.mmd += bd.mmd;
            trace.smooth += bd.smooth;
            ++steps;
        }
        const double inv = 1.0 / static_cast<double>(steps);
        trace.pre *= inv;
        trace.mmd *= inv;
        trace.smooth *= inv;
        trace.total =
            trace.pre + weights.lambda_mmd * trace.mmd + weights.beta_smooth * trace.smooth;

        if (validation) {
            const EvalReport rep = evaluate(result.model, *validation);
            trace.val_rmse = rep.rmse;
            if (rep.rmse < best_val) {
                best_val = rep.rmse;
                best_model = result.model;
                best_epoch = epoch;
            }
        }
        result.trace.push_back(trace);
    }

    if (validation) {
        result.model = std::move(best_model);
        result.best_val_rmse = best_val;
        result.best_epoch = best_epoch;
    }
    return result;
}

EvalReport evaluate(const SkdanModel& model, const DomainDataset& test) {
    if (test.samples.empty()) throw DataError("evaluate: empty test set");
    if (!test.labeled) throw DataError("evaluate: test set must be labeled");
    EvalReport rep;
    rep.n = test.samples.size();
    double sq = 0.0, abs_acc = 0.0;
    for (const auto& seg : test.samples) {
        const double d = model_predict(model, seg) - *seg.soh_label;
        rep.residuals.push_back(d);
        sq += d * d;
        abs_acc += std::abs(d);
    }
    rep.rmse = std::sqrt(sq / static_cast<double>(rep.n));
    rep.mae = abs_acc / static_cast<double>(rep.n);
    rep.score_sum = score_sum(rep.residuals);
    rep.score = score_mean(rep.residuals);
    return rep;
}

double score_sum(const std::vector<double>& residuals) {
    double s = 0.0;
    for (double d : residuals)
        s += d < 0.0 ? std::expm1(-d / 1.3) : std::expm1(d);
    return s;
}

double score_mean(const std::vector<double>& residuals) {
    if (residuals.empty()) return 0.0;
    return score_sum(residuals) / static_cast<double>(residuals.size());
}

HyperConfig draw_config(const SearchSpace& space, Rng& rng) {
    const auto choose = [&](const std::vector<int>& options) {
        return options[rng.uniform_int(options.size())];
    };
    HyperConfig hp;
    hp.batch_size = choose(space.batch_sizes);
    hp.learning_rate = rng.log_uniform(space.lr_min, space.lr_max);
    hp.n_attention_layers = choose(space.attention_layers);
    hp.d_model = choose(space.d_models);
    hp.n_heads = choose(space.heads);
    if (hp.d_model % hp.n_heads != 0) hp.n_heads = 2;
    hp.kernel_size = choose(space.kernel_sizes);
    hp.fnn_width = choose(space.fnn_widths);
    hp.dropout_rate = rng.uniform(space.dropout_min, space.dropout_max);
    hp.beta_smooth = rng.log_uniform(space.beta_min, space.beta_max);
    hp.lambda_mmd = rng.log_uniform(space.lambda_min, space.lambda_max);
    hp.gamma_noise = rng.log_uniform(space.gamma_min, space.gamma_max);
    hp.max_epochs = space.max_epochs;
    return hp;
}

std::pair<DomainDataset, DomainDataset> split_samples(const DomainDataset& ds,
                                                      double first_fraction, std::uint64_t seed) {
    if (first_fraction <= 0.0 || first_fraction >= 1.0)
        throw ConfigError("split_samples: fraction must lie in (0,1)");
    std::vector<std::size_t> idx(ds.samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    shuffle_indices(idx, rng);
    const std::size_t n_first = std::max<std::size_t>(
        1, std::min(ds.samples.size() - 1,
                    static_cast<std::size_t>(first_fraction * static_cast<double>(idx.size()))));
    DomainDataset a = ds, b = ds;
    a.samples.clear();
    b.samples.clear();
    for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_first ? a : b).samples.push_back(ds.samples[idx[i]]);
    return {std::move(a), std::move(b)};
}

SearchResult random_search(const DomainDataset& source, const DomainDataset& target,
                           const SearchSpace& space, int n_trials, const AblationFlags& flags,
                           std::uint64_t master_seed, double val_fraction, int n_threads) {
    if (n_trials < 1) throw ConfigError("random_search: need at least one trial");
    if (source.samples.size() < 2) throw DataError("random_search: source too small to split");
    Rng master(master_seed);
    // All trials share the data split.
    const std::uint64_t data_seed = master.split(hash_tag("data")).next_u64();
    auto [val, train] = split_samples(source, val_fraction, data_seed);

    std::vector<HyperConfig> configs;
    Rng draw_rng = master.split(hash_tag("draw"));
    for (int t = 0; t < n_trials; ++t) {
        HyperConfig hp = draw_config(space, draw_rng);
        hp.seed = master.split(hash_tag("trial") + static_cast<std::uint64_t>(t)).next_u64();
        configs.push_back(hp);
    }

    const auto run_trial = [&](int t) {
        TrialResult r;
        r.trial_id = t;
        r.config = configs[static_cast<std::size_t>(t)];
        const FitResult fr = fit(train, target, r.config, flags, &val);
        r.val_rmse = fr.best_val_rmse;
        return r;
    };

    unsigned workers = n_threads > 0 ? static_cast<unsigned>(n_threads)
                                     : std::max(1u, std::thread::hardware_concurrency());
    std::vector<TrialResult> results(static_cast<std::size_t>(n_trials));
    std::size_t next = 0;
    while (next < results.size()) {
        std::vector<std::future<TrialResult>> wave;
        for (unsigned w = 0; w < workers && next < results.size(); ++w, ++next)
            wave.push_back(std::async(std::launch::async, run_trial, static_cast<int>(next)));
        for (auto& f : wave) {
            TrialResult r = f.get();
            results[static_cast<std::size_t>(r.trial_id)] = std::move(r);
        }
    }

    SearchResult out;
    out.leaderboard = std::move(results);
    std::stable_sort(out.leaderboard.begin(), out.leaderboard.end(),
                     [](const TrialResult& a, const TrialResult& b) {
                         if (a.val_rmse != b.val_rmse) return a.val_rmse < b.val_rmse;
                         return a.trial_id < b.trial_id;
                     });
    out.best = out.leaderboard.front().config;
    return out;
}

void write_loss_trace_csv(const std::string& path, const std::vector<EpochTrace>& trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "epoch,L_pre,L_MMD,L_smooth,total\n";
    for (const auto& t : trace)
        out << t.epoch << ',' << fmt_double(t.pre) << ',' << fmt_double(t.mmd) << ','
            << fmt_double(t.smooth) << ',' << fmt_double(t.total) << '\n';
    if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace skdan
