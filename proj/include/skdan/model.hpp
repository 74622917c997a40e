#pragma once

#include <string>

#include "skdan/datapipe.hpp"
#include "skdan/predictor.hpp"
#include "skdan/sad.hpp"

namespace skdan {

// Full model: extractor + predictor parameters with their configurations,
// serialized together as one container.
struct SkdanModel {
    SadConfig sad_config;
    PredictorConfig predictor_config;
    SadParams sad;
    PredictorParams predictor;
};

struct ModelVars {
    SadVars sad;
    PredictorVars predictor;
};

// Sizes the predictor to the extractor output, validates both configs, and
// initializes all parameters from the seed.
SkdanModel init_model(SadConfig sad_cfg, PredictorConfig pred_cfg, std::uint64_t seed);

// All parameter tensors in a fixed declaration order.
std::vector<Tensor*> model_parameters(SkdanModel& m);
std::vector<const Tensor*> model_parameters(const SkdanModel& m);

ModelVars lift_model(Tape& tape, const SkdanModel& m, bool tracked);

// Rebuilds the Var structure from nodes in model_parameters order (used to
// drive the whole model from externally supplied leaves, e.g. grad checks).
ModelVars vars_from_list(const SkdanModel& m, const std::vector<Var>& params);

// 160x4 input tensor with channels (v, dv, dq, ic) as columns.
Tensor segment_to_tensor(const ChargeSegment& seg);

// Eval-mode scalar prediction for one segment.
double model_predict(const SkdanModel& m, const ChargeSegment& seg);

// Flattened extractor output for one segment (feature-distribution exports).
Eigen::VectorXd model_features(const SkdanModel& m, const ChargeSegment& seg);

void save_model(const SkdanModel& m, const std::string& path);
SkdanModel load_model(const std::string& path);

}  // namespace skdan
