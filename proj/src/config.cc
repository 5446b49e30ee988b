// Copyright (c) the SDVC Project Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <sstream>

#include "sdvc/common.h"
#include "sdvc/training.h"

namespace sdvc {
namespace {

namespace pt = boost::property_tree;

template <typename T>
T GetOr(const pt::ptree& tree, const std::string& key, T fallback) {
  try {
    return tree.get<T>(key, fallback);
  } catch (const pt::ptree_bad_data&) {
    Fail(ErrorCode::kInvalidArgument, "config key " + key + " has a bad value");
  }
}

std::vector<double> ParseList(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      Fail(ErrorCode::kInvalidArgument, "bad number in list: " + item);
    }
  }
  return out;
}

}  // namespace

TrainingConfig LoadTrainingConfig(const std::string& path) {
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    Fail(ErrorCode::kInput, std::string("cannot parse config: ") + e.what());
  }
  TrainingConfig c;
  c.lambda = GetOr(tree, "train.lambda", c.lambda);
  if (auto sweep = tree.get_optional<std::string>("train.lambda_sweep")) {
    c.lambda_sweep = ParseList(*sweep);
  }
  c.learning_rate = GetOr(tree, "train.learning_rate", c.learning_rate);
  c.batch_size = GetOr(tree, "train.batch_size", c.batch_size);
  c.epochs_phase1 = GetOr(tree, "train.epochs_phase1", c.epochs_phase1);
  c.epochs_phase2 = GetOr(tree, "train.epochs_phase2", c.epochs_phase2);
  const std::string masks = GetOr<std::string>(tree, "train.mask_source", "gt");
  if (masks == "gt") {
    c.mask_source = MaskSource::kGt;
  } else if (masks == "variance") {
    c.mask_source = MaskSource::kVariance;
  } else {
    Fail(ErrorCode::kInvalidArgument, "mask_source must be gt or variance");
  }
  const std::string loss = GetOr<std::string>(tree, "train.phase2_loss", "vcm");
  if (loss == "vcm") {
    c.phase2_loss = LossKind::kVcm;
  } else if (loss == "hvs") {
    c.phase2_loss = LossKind::kHvs;
  } else {
    Fail(ErrorCode::kInvalidArgument, "phase2_loss must be vcm or hvs");
  }
  c.seed = GetOr(tree, "train.seed", c.seed);
  c.crop_height = GetOr(tree, "train.crop_height", c.crop_height);
  c.crop_width = GetOr(tree, "train.crop_width", c.crop_width);
  c.scenes = GetOr(tree, "train.scenes", c.scenes);
  c.proxy_steps = GetOr(tree, "train.proxy_steps", c.proxy_steps);
  c.proxy_learning_rate =
      GetOr(tree, "train.proxy_learning_rate", c.proxy_learning_rate);
  c.reference_mode = GetOr(tree, "train.reference_mode", c.reference_mode);
  c.model.hidden_channels =
      GetOr(tree, "model.hidden_channels", c.model.hidden_channels);
  c.model.latent_channels =
      GetOr(tree, "model.latent_channels", c.model.latent_channels);
  c.model.hyper_channels =
      GetOr(tree, "model.hyper_channels", c.model.hyper_channels);
  c.model.kernel = GetOr(tree, "model.kernel", c.model.kernel);
  c.model.activation =
      GetOr<std::string>(tree, "model.activation", c.model.activation);
  c.Validate();
  return c;
}

std::string TrainingConfigToIni(const TrainingConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "[train]\n"
     << "lambda = " << c.lambda << "\n"
     << "lambda_sweep = ";
  for (size_t i = 0; i < c.lambda_sweep.size(); ++i) {
    os << (i ? "," : "") << c.lambda_sweep[i];
  }
  os << "\n"
     << "learning_rate = " << c.learning_rate << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs_phase1 = " << c.epochs_phase1 << "\n"
     << "epochs_phase2 = " << c.epochs_phase2 << "\n"
     << "mask_source = "
     << (c.mask_source == MaskSource::kGt ? "gt" : "variance") << "\n"
     << "phase2_loss = " << (c.phase2_loss == LossKind::kVcm ? "vcm" : "hvs")
     << "\n"
     << "seed = " << c.seed << "\n"
     << "crop_height = " << c.crop_height << "\n"
     << "crop_width = " << c.crop_width << "\n"
     << "scenes = " << c.scenes << "\n"
     << "proxy_steps = " << c.proxy_steps << "\n"
     << "proxy_learning_rate = " << c.proxy_learning_rate << "\n"
     << "reference_mode = " << (c.reference_mode ? "true" : "false") << "\n"
     << "\n[model]\n"
     << "hidden_channels = " << c.model.hidden_channels << "\n"
     << "latent_channels = " << c.model.latent_channels << "\n"
     << "hyper_channels = " << c.model.hyper_channels << "\n"
     << "kernel = " << c.model.kernel << "\n"
     << "activation = " << c.model.activation << "\n";
  return os.str();
}

}  // namespace sdvc
