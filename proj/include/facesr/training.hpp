#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "facesr/checkpoint.hpp"
#include "facesr/config.hpp"
#include "facesr/dataset.hpp"
#include "facesr/networks.hpp"
#include "facesr/priors.hpp"

namespace facesr {

struct EpochRecord {
    int epoch = 0;  // zero-based
    double lr = 0.0;
    double loss = 0.0;  // sample-weighted mean over the epoch
    double train_psnr = std::numeric_limits<double>::quiet_NaN();
    double val_psnr = std::numeric_limits<double>::quiet_NaN();
};

// Raised when a loss or gradient goes non-finite. Parameters are rolled
// back to `last_good`, the state at the start of the failing epoch.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, Checkpoint last_good, int epoch)
        : NumericError(what), last_good(std::move(last_good)), epoch(epoch) {}
    Checkpoint last_good;
    int epoch;
};

// Sample visiting order for one epoch, seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t count);

RegressorConfig regressor_config();
SamConfig sam_config(const TrainConfig& config);

class RenderTrainer {
public:
    RenderTrainer(const TrainConfig& config, const FaceBasis& basis, const Camera& camera, const SkinModel& skin,
                  std::vector<FaceSample> train);

    EpochRecord run_epoch();
    // Runs until `epoch()` reaches config.epochs.
    std::vector<EpochRecord> train(const std::function<void(const EpochRecord&)>& on_epoch = {});

    Checkpoint checkpoint() const;
    void resume(const Checkpoint& ckpt);

    int epoch() const { return epoch_; }
    Regressor<float>& regressor() { return regressor_; }
    const Regressor<float>& regressor() const { return regressor_; }

private:
    TrainConfig config_;
    const FaceBasis& basis_;
    Camera camera_;
    std::vector<FaceSample> train_;
    std::vector<std::vector<float>> attention_;
    Regressor<float> regressor_;
    Adam adam_;
    int epoch_ = 0;
};

// Prior stack for one LR image from the frozen render branch.
PriorStack compute_prior(const Regressor<float>& regressor, const FaceBasis& basis, const Camera& camera,
                         const Image& lr);

class SrTrainer {
public:
    // `render_ckpt` must be a render-branch checkpoint.
    SrTrainer(const TrainConfig& config, const FaceBasis& basis, const Camera& camera, const Checkpoint& render_ckpt,
              std::vector<FaceSample> train, std::vector<FaceSample> val);

    EpochRecord run_epoch();
    std::vector<EpochRecord> train(const std::function<void(const EpochRecord&)>& on_epoch = {});
    double validation_psnr() const;

    Checkpoint checkpoint() const;
    void resume(const Checkpoint& ckpt);

    int epoch() const { return epoch_; }
    SamNetwork<float>& network() { return sam_; }
    const SamNetwork<float>& network() const { return sam_; }

private:
    Tensor prior_batch(const std::vector<PriorStack>& priors, std::span<const std::size_t> idx) const;

    TrainConfig config_;
    const FaceBasis& basis_;
    Camera camera_;
    Regressor<float> regressor_;
    std::vector<FaceSample> train_;
    std::vector<FaceSample> val_;
    std::vector<PriorStack> train_priors_;
    std::vector<PriorStack> val_priors_;
    SamNetwork<float> sam_;
    Adam adam_;
    int epoch_ = 0;
};

// Loads an sr checkpoint and maps LR images to HR estimates.
class SuperResolver {
public:
    SuperResolver(const Checkpoint& ckpt, const FaceBasis& basis, const Camera& camera);

    Image run(const Image& lr) const;
    int scale() const { return config_.scale; }
    const SamConfig& config() const { return config_; }

private:
    const FaceBasis& basis_;
    Camera camera_;
    SamConfig config_;
    Regressor<float> regressor_;
    SamNetwork<float> sam_;
};

}  // namespace facesr
