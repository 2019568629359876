#pragma once

#include "data.hpp"
#include "metrics.hpp"
#include "model.hpp"

#include <iomanip>
#include <iostream>

namespace devignet {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline void to_json(nlohmann::json& j, const AdamConfig& c) {
    j = {{"type", "adam"}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

inline void from_json(const nlohmann::json& j, AdamConfig& c) {
    if (j.is_string()) {
        require(j.get<std::string>() == "adam", "only the adam optimizer is supported");
        return;
    }
    require(j.value("type", std::string("adam")) == "adam", "only the adam optimizer is supported");
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
}

struct TrainConfig {
    double lr = 1e-4;
    AdamConfig optimizer;
    int batch_size = 1;
    int64_t steps = 0;
    int crop = 512;
    double loss_lambda = 0.4;
    uint64_t seed = 0;
    int64_t eval_every = 100;
    std::string dataset_path;
    std::string out_dir = "runs/train";
    ModelConfig model;

    void validate() const {
        require(lr > 0.0, "lr must be positive");
        require(steps >= 0, "steps must be non-negative");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(crop >= 8, "crop must be >= 8");
        require(eval_every >= 1, "eval_every must be >= 1");
        model.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"lr", c.lr},
         {"optimizer", c.optimizer},
         {"batch_size", c.batch_size},
         {"steps", c.steps},
         {"crop", c.crop},
         {"loss_lambda", c.loss_lambda},
         {"seed", c.seed},
         {"eval_every", c.eval_every},
         {"dataset_path", c.dataset_path},
         {"out_dir", c.out_dir},
         {"model", c.model}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.lr = j.value("lr", c.lr);
    if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.crop = j.value("crop", c.crop);
    c.loss_lambda = j.value("loss_lambda", c.loss_lambda);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.dataset_path = j.value("dataset_path", c.dataset_path);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("model")) j.at("model").get_to(c.model);
}

// Apply a "dotted.key=value" override onto the serialized config.
inline void apply_override(nlohmann::json& j, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("override must look like key=value: " + spec);
    std::string key = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);

    nlohmann::json* cur = &j;
    size_t pos = 0;
    while (true) {
        const size_t dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (part.empty()) throw UsageError("bad override key: " + key);
        if (dot == std::string::npos) {
            nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
            (*cur)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
            break;
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

// ---------------------------------------------------------------------------
// Adam with conventional defaults. Moments live in checkpoint records named
// opt.m.<param> / opt.v.<param> so a resumed run is bit-identical.
// ---------------------------------------------------------------------------

class Adam {
public:
    Adam(ParamStore<float>& params, double lr, AdamConfig cfg) : params_(params), lr_(lr), cfg_(cfg) {
        for (const auto& p : params.items()) {
            m_.push_back(Tensor<float>::zeros(p->value.shape));
            v_.push_back(Tensor<float>::zeros(p->value.shape));
        }
    }

    void step() {
        ++t_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        const auto& items = params_.items();
        for (size_t i = 0; i < items.size(); ++i) {
            auto& p = items[i];
            if (!p->has_grad()) continue;
            float* w = p->value.ptr();
            const float* g = p->grad.ptr();
            float* m = m_[i].ptr();
            float* v = v_[i].ptr();
            const int64_t n = p->value.numel();
            for (int64_t k = 0; k < n; ++k) {
                const double gk = static_cast<double>(g[k]);
                const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
                const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
                m[k] = static_cast<float>(mk);
                v[k] = static_cast<float>(vk);
                const double mhat = mk / bc1;
                const double vhat = vk / bc2;
                w[k] = static_cast<float>(static_cast<double>(w[k]) -
                                          lr_ * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }

    std::vector<NamedTensorF> state_records() const {
        std::vector<NamedTensorF> out;
        const auto& items = params_.items();
        for (size_t i = 0; i < items.size(); ++i) {
            out.push_back({"opt.m." + items[i]->name, m_[i]});
            out.push_back({"opt.v." + items[i]->name, v_[i]});
        }
        return out;
    }

    void load_state(const std::vector<NamedTensorF>& records) {
        const auto& items = params_.items();
        for (size_t i = 0; i < items.size(); ++i) {
            for (const auto& r : records) {
                if (r.name == "opt.m." + items[i]->name) m_[i] = r.tensor;
                if (r.name == "opt.v." + items[i]->name) v_[i] = r.tensor;
            }
        }
    }

private:
    ParamStore<float>& params_;
    double lr_;
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::vector<Tensor<float>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    std::unique_ptr<DeVigNet<float>> model;
    int64_t steps_done = 0;
    std::vector<std::pair<int64_t, double>> loss_trace; // (step, loss)
    std::string final_checkpoint;
};

namespace detail {

// Sampling stream is salted so it never collides with crop derivation.
constexpr uint64_t kSampleSalt = 0x5a17ed5a17ed5a17ULL;

} // namespace detail

inline TrainResult train(const TrainConfig& cfg, const std::string& resume_dir = "",
                         std::ostream* log = &std::cout) {
    cfg.validate();
    auto dataset = data::load_paired_dir(cfg.dataset_path, data::Split::Train, cfg.crop, std::nullopt,
                                         cfg.seed);
    if (dataset.empty()) throw DataError("training dataset at " + cfg.dataset_path + " is empty");

    TrainResult result;
    int64_t start_step = 0;
    std::vector<NamedTensorF> opt_records;
    if (!resume_dir.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resume_dir);
        if (config_hash(ck.model->config()) != config_hash(cfg.model))
            throw DataError("resume checkpoint model config does not match the training config");
        result.model = std::move(ck.model);
        start_step = ck.meta.step;
        opt_records = std::move(ck.extra);
    } else {
        result.model = std::make_unique<DeVigNet<float>>(cfg.model);
    }
    DeVigNet<float>& model = *result.model;

    Adam opt(model.params(), cfg.lr, cfg.optimizer);
    if (!opt_records.empty()) {
        opt.load_state(opt_records);
        opt.set_t(start_step);
    }

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir + "/train_log.csv", start_step == 0 ? std::ios::trunc : std::ios::app);
    if (start_step == 0) csv << "step,loss,lr\n";

    for (int64_t step = start_step; step < cfg.steps; ++step) {
        // assemble the batch for this absolute step
        Rng srng = Rng::derive(cfg.seed ^ detail::kSampleSalt, static_cast<uint64_t>(step));
        std::vector<int64_t> picks(cfg.batch_size);
        for (auto& p : picks) p = srng.below(static_cast<int64_t>(dataset.size()));
        const int64_t h = dataset[picks[0]].input.h, w = dataset[picks[0]].input.w;
        Tensor<float> in({cfg.batch_size, 3, h, w}), gt({cfg.batch_size, 3, h, w});
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& s = dataset[picks[b]];
            if (s.input.h != h || s.input.w != w)
                throw DataError("batched samples must share one size; crop the dataset first");
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        in.at4(b, c, y, x) = s.input.at(y, x, c);
                        gt.at4(b, c, y, x) = s.target.at(y, x, c);
                    }
        }

        model.params().zero_grads();
        Var<float> input = make_leaf(std::move(in));
        Var<float> target = make_leaf(std::move(gt));
        Var<float> pred = model.forward_train(input);
        Var<float> loss = loss_total(pred, target, static_cast<float>(cfg.loss_lambda));
        const double loss_v = static_cast<double>(loss->value.data[0]);
        if (!std::isfinite(loss_v))
            throw NumericError("non-finite loss " + std::to_string(loss_v) + " at step " +
                               std::to_string(step + 1) + "; aborting");
        backward(loss);
        opt.step();

        result.loss_trace.emplace_back(step + 1, loss_v);
        csv << (step + 1) << "," << std::setprecision(10) << loss_v << "," << cfg.lr << "\n";
        if (log && ((step + 1) % 10 == 0 || step + 1 == cfg.steps))
            *log << "step " << (step + 1) << "/" << cfg.steps << " loss " << std::setprecision(6)
                 << loss_v << " lr " << cfg.lr << "\n";

        if ((step + 1) % cfg.eval_every == 0 && step + 1 != cfg.steps)
            save_checkpoint(cfg.out_dir + "/ckpt_" + std::to_string(step + 1), model, step + 1,
                            opt.state_records());
    }

    result.steps_done = cfg.steps;
    result.final_checkpoint = cfg.out_dir + "/final";
    save_checkpoint(result.final_checkpoint, model, cfg.steps, opt.state_records());
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation protocol: per resolution, aligned resize of both members, model
// forward, per-image and aggregate metrics, plus the input-vs-target baseline
// row.
// ---------------------------------------------------------------------------

struct EvalResult {
    int64_t resolution = 0;
    MetricsReport model;          // empty in baseline-only runs
    MetricsReport input_baseline; // the "Input" row: raw input vs target
};

// Pass model = nullptr to compute only the input baseline row. Extra paired
// metrics (an LPIPS plug-in, say) are appended to every row they can see.
inline std::vector<EvalResult> evaluate(const DeVigNet<float>* model, const std::string& dataset_path,
                                        const std::vector<int>& resolutions, std::ostream* log = nullptr,
                                        const ExtraMetrics& extra = {}) {
    std::vector<EvalResult> results;
    for (int res : resolutions) {
        auto samples = data::load_paired_dir(dataset_path, data::Split::Test, std::nullopt, res);
        EvalResult er;
        er.resolution = res;
        er.model.resolution = res;
        er.input_baseline.resolution = res;
        auto extras_for = [&](const Image& a, const Image& b) {
            std::vector<std::pair<std::string, double>> out;
            for (const auto& [name, fn] : extra) out.emplace_back(name, fn(a, b));
            return out;
        };
        for (const auto& s : samples) {
            if (model) {
                const Image out = model->forward(s.input);
                er.model.add(s.id, psnr(out, s.target), ssim(out, s.target), mae_255(out, s.target),
                             extras_for(out, s.target));
            }
            er.input_baseline.add(s.id, psnr(s.input, s.target), ssim(s.input, s.target),
                                  mae_255(s.input, s.target), extras_for(s.input, s.target));
        }
        er.model.finalize();
        er.input_baseline.finalize();
        if (log) {
            *log << "res " << res << ":";
            if (model)
                *log << " model psnr " << er.model.aggregate.psnr_db << " dB, ssim "
                     << er.model.aggregate.ssim << ", mae " << er.model.aggregate.mae_255 << " (0-255) |";
            *log << " input psnr " << er.input_baseline.aggregate.psnr_db << " dB, ssim "
                 << er.input_baseline.aggregate.ssim << ", mae " << er.input_baseline.aggregate.mae_255
                 << " (0-255)\n";
        }
        results.push_back(std::move(er));
    }
    return results;
}

inline std::vector<EvalResult> evaluate(const DeVigNet<float>& model, const std::string& dataset_path,
                                        const std::vector<int>& resolutions, std::ostream* log = nullptr,
                                        const ExtraMetrics& extra = {}) {
    return evaluate(&model, dataset_path, resolutions, log, extra);
}

inline nlohmann::json eval_results_to_json(const std::vector<EvalResult>& results) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results)
        j.push_back({{"resolution", r.resolution},
                     {"model", to_json(r.model)},
                     {"input_baseline", to_json(r.input_baseline)}});
    return j;
}

// Devignet a single image file; optionally write an input|output grid.
inline void infer(const DeVigNet<float>& model, const std::string& in_path, const std::string& out_path,
                  bool grid = false) {
    const Image input = read_png(in_path);
    const Image output = model.forward(input);
    if (!grid) {
        write_png(out_path, output);
        return;
    }
    Image side(input.h, input.w * 2);
    for (int64_t y = 0; y < input.h; ++y)
        for (int64_t x = 0; x < input.w; ++x)
            for (int c = 0; c < 3; ++c) {
                side.at(y, x, c) = input.at(y, x, c);
                side.at(y, x + input.w, c) = output.at(y, x, c);
            }
    write_png(out_path, side);
}

} // namespace devignet
