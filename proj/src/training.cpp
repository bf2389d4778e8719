#include "facesr/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "facesr/metrics.hpp"
#include "facesr/ops.hpp"

namespace facesr {

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t count) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    std::uint64_t h = fnv1a64("epoch-order");
    h = fnv1a64(&seed, sizeof seed, h);
    const std::int64_t e = epoch;
    h = fnv1a64(&e, sizeof e, h);
    std::mt19937_64 rng(h);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

RegressorConfig regressor_config() { return RegressorConfig{}; }

SamConfig sam_config(const TrainConfig& config) {
    SamConfig s;
    s.channels = static_cast<std::size_t>(config.channels);
    s.rcab_count = static_cast<std::size_t>(config.rcab_count);
    s.reduction = static_cast<std::size_t>(config.reduction);
    s.scale = config.scale;
    s.sft_count = static_cast<std::size_t>(config.sft_count);
    s.no_prior = config.no_prior;
    s.no_sam = config.no_sam;
    s.validate();
    return s;
}

namespace {

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

bool all_finite(const ParameterSet<float>& params) {
    for (const auto& e : params.entries()) {
        if (!e.tensor.has_grad()) continue;
        for (float v : e.tensor.grad())
            if (!std::isfinite(v)) return false;
    }
    return true;
}

Tensor gather_images(const std::vector<FaceSample>& samples, std::span<const std::size_t> idx, bool hr) {
    std::vector<Image> imgs;
    imgs.reserve(idx.size());
    for (auto i : idx) imgs.push_back(hr ? samples[i].hr : samples[i].lr);
    return images_to_tensor(imgs);
}

void check_samples(const std::vector<FaceSample>& samples, int lr_size, const char* what) {
    for (const auto& s : samples) {
        if (s.hr.width != 128 || s.hr.height != 128 || s.hr.channels != 3) {
            throw DataError(std::string(what) + " sample " + s.name + ": HR must be 3x128x128");
        }
        if (s.lr.width != lr_size || s.lr.height != lr_size || s.lr.channels != 3) {
            throw DataError(std::string(what) + " sample " + s.name + ": LR size does not match the scale");
        }
    }
}

void write_common_meta(Checkpoint& c, const TrainConfig& config, int epoch) {
    c.meta["epoch"] = std::to_string(epoch);
    c.meta["lr"] = fmt(step_decay_lr(config.lr, epoch, config.lr_period));
    c.meta["seed"] = std::to_string(config.seed);
    std::ostringstream h;
    h << std::hex << config.hash();
    c.meta["config_hash"] = h.str();
    c.meta["scale"] = std::to_string(config.scale);
}

int read_epoch(const Checkpoint& c) {
    try {
        return std::stoi(c.meta_value("epoch"));
    } catch (const std::logic_error&) {
        throw CorruptManifestError("checkpoint: bad epoch meta");
    }
}

void expect_kind(const Checkpoint& c, const std::string& kind) {
    const auto& k = c.meta_value("kind");
    if (k != kind) throw ShapeMismatchError("checkpoint kind is '" + k + "', expected '" + kind + "'");
}

// Copies reg.* tensors from any checkpoint that carries them.
void load_regressor(const Checkpoint& c, Regressor<float>& reg) { restore_parameters(c, reg.params()); }

}  // namespace

// ---- render branch -----------------------------------------------------

RenderTrainer::RenderTrainer(const TrainConfig& config, const FaceBasis& basis, const Camera& camera,
                             const SkinModel& skin, std::vector<FaceSample> train)
    : config_(config), basis_(basis), camera_(camera), train_(std::move(train)),
      regressor_(regressor_config(), config.seed),
      adam_(AdamOptions{config.lr}) {
    config_.validate();
    if (train_.empty()) throw DataError("render training needs at least one sample");
    check_samples(train_, config_.lr_size(), "train");
    for (const auto& s : train_) attention_.push_back(skin_mask(s.hr, skin));
    adam_.attach(regressor_.params());
}

EpochRecord RenderTrainer::run_epoch() {
    Checkpoint last_good = checkpoint();
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.lr = step_decay_lr(config_.lr, epoch_, config_.lr_period);
    adam_.set_lr(rec.lr);
    const auto order = epoch_order(config_.seed, epoch_, train_.size());
    const std::size_t hw = static_cast<std::size_t>(camera_.width) * camera_.height;
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch));
        std::span<const std::size_t> idx(order.data() + start, end - start);
        const Tensor lr = gather_images(train_, idx, false);
        const Tensor hr = gather_images(train_, idx, true);
        std::vector<float> att;
        att.reserve(idx.size() * hw);
        for (auto i : idx) att.insert(att.end(), attention_[i].begin(), attention_[i].end());
        const Tensor attention({idx.size(), 1, static_cast<std::size_t>(camera_.height),
                                static_cast<std::size_t>(camera_.width)},
                               std::move(att));

        regressor_.params().zero_grad();
        double value = 0.0;
        try {
            const Tensor coeffs = regressor_.forward(lr);
            const auto rendered = render_batch(basis_, camera_, coeffs);
            const Tensor loss = rendering_loss(hr, rendered.images, attention, rendered.masks);
            value = loss.item();
            if (!std::isfinite(value)) throw NumericError("non-finite rendering loss");
            Tensor objective = config_.coeff_prior_weight > 0
                                   ? add(loss, coefficient_prior(coeffs, config_.coeff_prior_weight))
                                   : loss;
            objective.backward();
            if (!all_finite(regressor_.params())) throw NumericError("non-finite gradient");
            adam_.step(regressor_.params());
        } catch (const NumericError& e) {
            resume(last_good);
            throw TrainingAborted(std::string("render training aborted in epoch ") + std::to_string(rec.epoch) +
                                      ": " + e.what(),
                                  std::move(last_good), rec.epoch);
        } catch (const DegenerateMaskError& e) {
            resume(last_good);
            throw TrainingAborted(std::string("render training aborted in epoch ") + std::to_string(rec.epoch) +
                                      ": " + e.what(),
                                  std::move(last_good), rec.epoch);
        }
        total += value * static_cast<double>(idx.size());
    }
    rec.loss = total / static_cast<double>(train_.size());
    ++epoch_;
    return rec;
}

std::vector<EpochRecord> RenderTrainer::train(const std::function<void(const EpochRecord&)>& on_epoch) {
    std::vector<EpochRecord> out;
    while (epoch_ < config_.epochs) {
        out.push_back(run_epoch());
        if (on_epoch) on_epoch(out.back());
    }
    return out;
}

Checkpoint RenderTrainer::checkpoint() const {
    Checkpoint c;
    c.meta["kind"] = "render";
    write_common_meta(c, config_, epoch_);
    store_parameters(c, regressor_.params());
    store_optimizer(c, regressor_.params(), adam_);
    return c;
}

void RenderTrainer::resume(const Checkpoint& ckpt) {
    expect_kind(ckpt, "render");
    const int e = read_epoch(ckpt);
    load_regressor(ckpt, regressor_);
    restore_optimizer(ckpt, regressor_.params(), adam_);
    epoch_ = e;
}

// ---- SR branch ---------------------------------------------------------

PriorStack compute_prior(const Regressor<float>& regressor, const FaceBasis& basis, const Camera& camera,
                         const Image& lr) {
    const Tensor coeffs = regressor.forward(image_to_tensor(lr)).detach();
    const FaceCoefficients<float> c(std::span<const float>(coeffs.data()));
    const auto out = render(basis, c, camera);
    return build_prior_stack(out, coeffs.data(), lr.width);
}

namespace {

std::vector<PriorStack> priors_for(const std::vector<FaceSample>& samples, const Regressor<float>& reg,
                                   const FaceBasis& basis, const Camera& camera, bool needed) {
    std::vector<PriorStack> out;
    if (!needed) return out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(compute_prior(reg, basis, camera, s.lr));
    return out;
}

}  // namespace

SrTrainer::SrTrainer(const TrainConfig& config, const FaceBasis& basis, const Camera& camera,
                     const Checkpoint& render_ckpt, std::vector<FaceSample> train, std::vector<FaceSample> val)
    : config_(config), basis_(basis), camera_(camera), regressor_(regressor_config(), config.seed),
      train_(std::move(train)), val_(std::move(val)), sam_(sam_config(config), config.seed),
      adam_(AdamOptions{config.lr}) {
    config_.validate();
    if (train_.empty()) throw DataError("SR training needs at least one sample");
    check_samples(train_, config_.lr_size(), "train");
    check_samples(val_, config_.lr_size(), "validation");
    expect_kind(render_ckpt, "render");
    load_regressor(render_ckpt, regressor_);
    const bool needed = !config_.no_prior;
    train_priors_ = priors_for(train_, regressor_, basis_, camera_, needed);
    val_priors_ = priors_for(val_, regressor_, basis_, camera_, needed);
    adam_.attach(sam_.params());
}

Tensor SrTrainer::prior_batch(const std::vector<PriorStack>& priors, std::span<const std::size_t> idx) const {
    const auto s = static_cast<std::size_t>(config_.lr_size());
    if (priors.empty()) return Tensor::zeros({idx.size(), kPriorChannels, s, s});
    std::vector<PriorStack> picked;
    picked.reserve(idx.size());
    for (auto i : idx) picked.push_back(priors[i]);
    return stack_priors(picked);
}

EpochRecord SrTrainer::run_epoch() {
    Checkpoint last_good = checkpoint();
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.lr = step_decay_lr(config_.lr, epoch_, config_.lr_period);
    adam_.set_lr(rec.lr);
    const auto order = epoch_order(config_.seed, epoch_, train_.size());
    double total = 0.0, psnr_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch));
        std::span<const std::size_t> idx(order.data() + start, end - start);
        const Tensor lr = gather_images(train_, idx, false);
        const Tensor hr = gather_images(train_, idx, true);
        const Tensor prior = prior_batch(train_priors_, idx);

        sam_.params().zero_grad();
        double value = 0.0;
        try {
            const Tensor out = sam_.forward(lr, prior);
            Tensor loss = l1_loss(out, hr);
            value = loss.item();
            if (!std::isfinite(value)) throw NumericError("non-finite SR loss");
            const Tensor clamped = clamp01(out.detach());
            for (std::size_t k = 0; k < idx.size(); ++k) {
                psnr_total += psnr(tensor_to_image(clamped, k), train_[idx[k]].hr);
            }
            loss.backward();
            if (!all_finite(sam_.params())) throw NumericError("non-finite gradient");
            adam_.step(sam_.params());
        } catch (const NumericError& e) {
            resume(last_good);
            throw TrainingAborted(std::string("SR training aborted in epoch ") + std::to_string(rec.epoch) + ": " +
                                      e.what(),
                                  std::move(last_good), rec.epoch);
        }
        total += value * static_cast<double>(idx.size());
    }
    rec.loss = total / static_cast<double>(train_.size());
    rec.train_psnr = psnr_total / static_cast<double>(train_.size());
    ++epoch_;
    rec.val_psnr = validation_psnr();
    return rec;
}

std::vector<EpochRecord> SrTrainer::train(const std::function<void(const EpochRecord&)>& on_epoch) {
    std::vector<EpochRecord> out;
    while (epoch_ < config_.epochs) {
        out.push_back(run_epoch());
        if (on_epoch) on_epoch(out.back());
    }
    return out;
}

double SrTrainer::validation_psnr() const {
    if (val_.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (std::size_t i = 0; i < val_.size(); ++i) {
        const std::size_t one[1] = {i};
        const Tensor out = sam_.infer(image_to_tensor(val_[i].lr), prior_batch(val_priors_, one));
        total += psnr(tensor_to_image(out), val_[i].hr);
    }
    return total / static_cast<double>(val_.size());
}

Checkpoint SrTrainer::checkpoint() const {
    Checkpoint c;
    c.meta["kind"] = "sr";
    write_common_meta(c, config_, epoch_);
    c.meta["channels"] = std::to_string(config_.channels);
    c.meta["rcab_count"] = std::to_string(config_.rcab_count);
    c.meta["reduction"] = std::to_string(config_.reduction);
    c.meta["sft_count"] = std::to_string(config_.sft_count);
    c.meta["no_prior"] = config_.no_prior ? "1" : "0";
    c.meta["no_sam"] = config_.no_sam ? "1" : "0";
    store_parameters(c, regressor_.params());
    store_parameters(c, sam_.params());
    store_optimizer(c, sam_.params(), adam_);
    return c;
}

void SrTrainer::resume(const Checkpoint& ckpt) {
    expect_kind(ckpt, "sr");
    const int e = read_epoch(ckpt);
    restore_parameters(ckpt, sam_.params());
    restore_optimizer(ckpt, sam_.params(), adam_);
    epoch_ = e;
}

// ---- inference ---------------------------------------------------------

namespace {

SamConfig sam_config_from_meta(const Checkpoint& c) {
    auto get_int = [&](const char* key) {
        try {
            return std::stoi(c.meta_value(key));
        } catch (const std::logic_error&) {
            throw CorruptManifestError(std::string("checkpoint: bad meta ") + key);
        }
    };
    TrainConfig t;
    t.scale = get_int("scale");
    t.channels = get_int("channels");
    t.rcab_count = get_int("rcab_count");
    t.reduction = get_int("reduction");
    t.sft_count = get_int("sft_count");
    t.no_prior = get_int("no_prior") != 0;
    t.no_sam = get_int("no_sam") != 0;
    t.validate();
    return sam_config(t);
}

}  // namespace

SuperResolver::SuperResolver(const Checkpoint& ckpt, const FaceBasis& basis, const Camera& camera)
    : basis_(basis), camera_(camera), config_((expect_kind(ckpt, "sr"), sam_config_from_meta(ckpt))),
      regressor_(regressor_config(), 0), sam_(config_, 0) {
    load_regressor(ckpt, regressor_);
    restore_parameters(ckpt, sam_.params());
}

Image SuperResolver::run(const Image& lr) const {
    const int s = 128 / config_.scale;
    if (lr.width != s || lr.height != s || lr.channels != 3) {
        throw DataError("input must be 3x" + std::to_string(s) + "x" + std::to_string(s) + " for scale " +
                        std::to_string(config_.scale) + ", got " + std::to_string(lr.width) + "x" +
                        std::to_string(lr.height));
    }
    const auto sz = static_cast<std::size_t>(s);
    Tensor prior = config_.no_prior ? Tensor::zeros({1, kPriorChannels, sz, sz})
                                    : compute_prior(regressor_, basis_, camera_, lr).channels;
    prior = reshape(prior, {1, kPriorChannels, sz, sz});
    return tensor_to_image(sam_.infer(image_to_tensor(lr), prior));
}

}  // namespace facesr
