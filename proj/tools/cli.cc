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

#include "cli.h"

#include <CLI11.hpp>
#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "sdvc/bitstream.h"
#include "sdvc/byte_io.h"
#include "sdvc/entropy_model.h"
#include "sdvc/eval.h"
#include "sdvc/image.h"
#include "sdvc/mask.h"
#include "sdvc/model.h"
#include "sdvc/parameter_store.h"
#include "sdvc/pipeline.h"
#include "sdvc/training.h"

namespace sdvc {

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kDimension:
    case ErrorCode::kInput:
    case ErrorCode::kNoOverlap:
      return kExitInput;
    case ErrorCode::kModel:
      return kExitModel;
    case ErrorCode::kFormat:
    case ErrorCode::kCorruption:
      return kExitCorruption;
    case ErrorCode::kDivergence:
      return kExitDivergence;
  }
  return kExitUnexpected;
}

namespace {

namespace fs = std::filesystem;

std::string Format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

void RequireFile(const std::string& path, const std::string& what,
                 ErrorCode code = ErrorCode::kInput) {
  std::error_code ec;
  if (path.empty()) Fail(code, what + " path is required");
  if (!fs::is_regular_file(path, ec)) Fail(code, what + " not found: " + path);
}

struct MaskOptions {
  std::string source = "variance";
  std::string detections;
  std::string image_id;
  std::string annotations;
  std::string mask_file;
  double var_low = VarianceThresholds{}.low;
  double var_high = VarianceThresholds{}.high;
  double confidence_min = kDefaultConfidenceMin;

  void Register(CLI::App* app) {
    app->add_option("--mask", source, "Mask source")
        ->check(CLI::IsMember({"variance", "detections", "gt", "file"}));
    app->add_option("--detections", detections,
                    "Detections, one JSON object per line");
    app->add_option("--image-id", image_id, "Detection image_id filter");
    app->add_option("--annotations", annotations,
                    "16-bit instance-id PNG for --mask gt");
    app->add_option("--mask-file", mask_file, "ASCII level grid for --mask file");
    app->add_option("--var-low", var_low, "Variance below which cells go to 3");
    app->add_option("--var-high", var_high, "Variance from which cells go to 1");
    app->add_option("--confidence-min", confidence_min,
                    "Minimum detection confidence");
  }

  void Validate() const {
    if (source == "detections") RequireFile(detections, "detections file");
    if (source == "gt") RequireFile(annotations, "annotation raster");
    if (source == "file") RequireFile(mask_file, "mask file");
    SDVC_CHECK_ARG(var_low >= 0 && var_low < var_high,
                   "variance thresholds must satisfy 0 <= low < high");
  }

  SaliencyMask Build(const Image& img) const {
    const size_t h = img.height, w = img.width;
    if (source == "variance") return VarianceMask(img, {var_low, var_high});
    if (source == "detections") {
      const auto boxes = ReadDetections(detections, image_id);
      return DetectionMask(boxes, h, w, confidence_min);
    }
    if (source == "gt") return GtMask(ReadAnnotations(annotations), h, w);
    const auto bytes = ReadFileBytes(mask_file);
    SaliencyMask m =
        SaliencyMask::FromAscii(std::string(bytes.begin(), bytes.end()));
    if (m.rows() != CellGridExtent(h) || m.cols() != CellGridExtent(w)) {
      Fail(ErrorCode::kDimension, "mask file grid does not match the image");
    }
    return m;
  }
};

Codec LoadCodec(const std::string& path) {
  RequireFile(path, "model checkpoint", ErrorCode::kModel);
  return Codec(ParameterStore::Load(path));
}

Precision PrecisionFor(bool reference) {
  return reference ? Precision::kReference : Precision::kFast;
}

// ---------------------------------------------------------------------------

struct MaskCmd {
  std::string image, out;
  MaskOptions mask;

  int Run(std::ostream& out_stream) const {
    RequireFile(image, "image");
    mask.Validate();
    const Image img = ReadImage(image);
    const SaliencyMask m = mask.Build(img);
    if (out.empty()) {
      out_stream << m.ToAscii();
    } else {
      WriteTextAtomic(out, m.ToAscii());
    }
    return kExitOk;
  }
};

struct EncodeCmd {
  std::string image, model, out, recon;
  MaskOptions mask;
  int lambda_id = 0;
  uint64_t seed = 1;
  bool reference = false;
  bool per_cell_bits = false;

  int Run(std::ostream& os) const {
    RequireFile(image, "image");
    mask.Validate();
    SDVC_CHECK_ARG(!out.empty(), "--out is required");
    ScopedPrecision precision(PrecisionFor(reference));
    const Codec codec = LoadCodec(model);
    const Image img = ReadImage(image);
    if (img.height > 0xffff || img.width > 0xffff) {
      Fail(ErrorCode::kDimension, "image sides must fit in 16 bits");
    }
    const SaliencyMask m = mask.Build(img);

    NoGradGuard no_grad;
    const Image padded = ReflectPad(img, kCellSize);
    const LatentSet latents =
        codec.Encode(padded.ToTensor(), {m}, Mode::kInfer, nullptr);
    const RateEstimate est = EstimateRate(latents, codec.params());
    const Bitstream bs = EncodeBitstream(codec, latents, img.height, img.width,
                                         static_cast<uint8_t>(lambda_id));
    const std::vector<uint8_t> bytes = bs.Serialize();
    Image rec;
    if (!recon.empty()) {
      rec = CropImage(Image::FromTensor(DecoderReconstruction(codec, latents)),
                      0, 0, img.height, img.width);
    }
    WriteFileAtomic(out, bytes);
    if (!recon.empty()) WritePng(recon, rec);

    os << "model " << model << " (hash " << std::hex << codec.Hash()
       << std::dec << ")\n";
    os << "seed " << seed << ", "
       << (reference ? "reference" : "fast") << " mode\n";
    os << "bytes " << bytes.size() << "\n";
    os << "bpp " << Format("%.6f", BitsPerPixel(bytes.size(), img.height,
                                                img.width))
       << "\n";
    os << "mask_bits " << 8 * bs.mask.size() << "\n";
    for (int level = 1; level <= kNumLevels; ++level) {
      const size_t y = bs.segments[SegmentIndex(level, true)].size();
      const size_t z = bs.segments[SegmentIndex(level, false)].size();
      os << "level" << level << "_cells " << m.CountLevel(level)
         << " level" << level << "_bits " << 8 * (y + z)
         << " (y " << 8 * y << ", z " << 8 * z << ")\n";
    }
    os << "estimated_bits " << Format("%.1f", est.bits.item()) << "\n";
    if (per_cell_bits) {
      os << "per_cell_bits\n";
      const auto& cells = est.cell_bits.at(0);
      for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) {
          os << (c ? " " : "") << Format("%.1f", cells[r * m.cols() + c]);
        }
        os << "\n";
      }
    }
    if (!recon.empty()) {
      os << "psnr " << Format("%.3f", Psnr(img, QuantizeTo8Bit(rec))) << "\n";
    }
    return kExitOk;
  }
};

struct DecodeCmd {
  std::string in, model, out;
  bool reference = false;

  int Run(std::ostream& os) const {
    RequireFile(in, "bitstream");
    SDVC_CHECK_ARG(!out.empty(), "--out is required");
    ScopedPrecision precision(PrecisionFor(reference));
    const Codec codec = LoadCodec(model);
    const Bitstream bs = Bitstream::Parse(ReadFileBytes(in));
    const Image img = DecodeImage(codec, bs);
    WritePng(out, img);
    os << "decoded " << img.width << "x" << img.height << " -> " << out
       << "\n";
    return kExitOk;
  }
};

struct TrainCmd {
  std::string config, dataset, out_prefix;
  bool synthetic = false;
  bool smoke = false;
  bool reference = false;
  int64_t seed = -1;

  int Run(std::ostream& os) const {
    SDVC_CHECK_ARG(synthetic != !dataset.empty(),
                   "exactly one of --synthetic and --dataset is required");
    SDVC_CHECK_ARG(!out_prefix.empty(), "--out-prefix is required");
    TrainingConfig cfg;
    if (!config.empty()) {
      RequireFile(config, "config");
      cfg = LoadTrainingConfig(config);
    }
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (reference) cfg.reference_mode = true;
    if (smoke) {
      cfg.epochs_phase1 = 2;
      cfg.epochs_phase2 = 2;
    }
    cfg.Validate();
    const std::vector<SyntheticScene> data =
        synthetic ? MakeSyntheticDataset(cfg.scenes, cfg.seed)
                  : ReadSceneDataset(dataset);
    const fs::path parent = fs::path(out_prefix).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    const TrainResult r = TrainSchedule(data, cfg, out_prefix);
    for (const EpochLog& e : r.log) os << FormatEpochLog(e) << "\n";
    os << "phase1 " << out_prefix << ".phase1.sdhc hash " << std::hex
       << r.phase1.Hash() << "\n";
    os << "phase2 " << out_prefix << ".phase2.sdhc hash " << r.phase2.Hash()
       << "\n";
    os << "proxy " << out_prefix << ".proxy.sdhc hash " << r.proxy.Hash()
       << std::dec << "\n";
    return kExitOk;
  }
};

struct SynthCmd {
  std::string out;
  size_t count = 16;
  uint64_t seed = 1;

  int Run(std::ostream& os) const {
    SDVC_CHECK_ARG(!out.empty(), "--out is required");
    SDVC_CHECK_ARG(count > 0, "--count must be positive");
    WriteSceneDataset(out, MakeSyntheticDataset(count, seed));
    os << "wrote " << count << " scenes to " << out << "\n";
    return kExitOk;
  }
};

InferenceMask ParseInferenceMask(const std::string& s) {
  if (s == "variance") return InferenceMask::kVariance;
  if (s == "detections") return InferenceMask::kDetections;
  if (s == "gt") return InferenceMask::kGt;
  Fail(ErrorCode::kInvalidArgument, "unknown mask kind " + s);
}

std::vector<std::string> SplitList(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// [sweep] dataset = synthetic | <dir>, scenes, seed, proxy = <checkpoint>.
// [codec.<name>] models = <lambda 0>,<lambda 1>,..., mask = variance |
// detections | gt. Model paths are relative to the sweep file.
std::vector<RateAccuracyCurve> RunSweep(const std::string& path,
                                        std::ostream& os) {
  namespace pt = boost::property_tree;
  RequireFile(path, "sweep file");
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    Fail(ErrorCode::kInput, std::string("cannot parse sweep: ") + e.what());
  }
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() ? p : (base / p).string();
  };
  const std::string dataset = tree.get<std::string>("sweep.dataset", "synthetic");
  const size_t scenes = tree.get<size_t>("sweep.scenes", 32);
  const uint64_t seed = tree.get<uint64_t>("sweep.seed", 1000);
  const std::string proxy_path = resolve(tree.get<std::string>("sweep.proxy", ""));
  RequireFile(proxy_path, "proxy checkpoint", ErrorCode::kModel);

  struct Entry {
    std::string name;
    std::vector<std::string> models;
    InferenceMask mask;
  };
  std::vector<Entry> entries;
  for (const auto& [section, child] : tree) {
    if (section.rfind("codec.", 0) != 0) continue;
    Entry e{section.substr(6), {}, InferenceMask::kVariance};
    for (const auto& m : SplitList(child.get<std::string>("models", ""))) {
      e.models.push_back(resolve(m));
      RequireFile(e.models.back(), "model checkpoint", ErrorCode::kModel);
    }
    SDVC_CHECK_ARG(!e.models.empty() && e.models.size() <= 256,
                   "codec " + e.name + " needs 1..256 models");
    e.mask = ParseInferenceMask(child.get<std::string>("mask", "detections"));
    entries.push_back(std::move(e));
  }
  SDVC_CHECK_ARG(!entries.empty(), "sweep defines no [codec.*] sections");

  const std::vector<SyntheticScene> data =
      dataset == "synthetic" ? MakeSyntheticDataset(scenes, seed)
                             : ReadSceneDataset(resolve(dataset));
  ProxySegNet proxy(ParameterStore::Load(proxy_path));
  proxy.Freeze();

  std::vector<RateAccuracyCurve> curves;
  for (const Entry& e : entries) {
    RateAccuracyCurve curve;
    curve.codec = e.name;
    curve.dataset = dataset;
    for (size_t i = 0; i < e.models.size(); ++i) {
      const Codec codec = LoadCodec(e.models[i]);
      const ModelEvaluation ev = EvaluateModel(
          codec, data, proxy, e.mask, static_cast<uint8_t>(i));
      curve.points.push_back({ev.mean_bpp, ev.wap, "lambda" + std::to_string(i)});
      os << e.name << " lambda" << i << " bpp " << Format("%.6f", ev.mean_bpp)
         << " wAP " << Format("%.4f", ev.wap) << "\n";
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

struct EvalCmd {
  std::vector<std::string> curve_files;
  std::string sweep, anchor, out;
  bool reference = false;

  int Run(std::ostream& os) const {
    SDVC_CHECK_ARG(!out.empty(), "--out is required");
    for (const auto& f : curve_files) RequireFile(f, "curve file");
    ScopedPrecision precision(PrecisionFor(reference));
    std::vector<RateAccuracyCurve> curves;
    for (const auto& f : curve_files) {
      auto c = ReadCurvesCsv(f);
      curves.insert(curves.end(), c.begin(), c.end());
    }
    if (!sweep.empty()) {
      auto c = RunSweep(sweep, os);
      curves.insert(curves.end(), c.begin(), c.end());
    }
    SDVC_CHECK_ARG(curves.size() >= 2, "need at least two curves");
    size_t anchor_index = 0;
    if (!anchor.empty()) {
      const auto it = std::find_if(curves.begin(), curves.end(),
                                   [&](const auto& c) { return c.codec == anchor; });
      SDVC_CHECK_ARG(it != curves.end(), "anchor codec not found: " + anchor);
      anchor_index = static_cast<size_t>(it - curves.begin());
    }
    const std::string table = FormatBdTable(curves, anchor_index);
    const fs::path parent = fs::path(out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    EmitCurves(curves, out);
    WriteTextAtomic(out + ".txt", table);
    os << table;
    return kExitOk;
  }
};

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Saliency-driven hierarchical neural image codec", "sdvc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sdvc 1.0");

  MaskCmd mask;
  auto* mask_app = app.add_subcommand("mask", "Compute a cell-level mask");
  mask_app->add_option("--image", mask.image, "Input PNG or PPM")->required();
  mask_app->add_option("--out", mask.out, "ASCII mask output (default stdout)");
  mask.mask.Register(mask_app);

  EncodeCmd enc;
  auto* enc_app = app.add_subcommand("encode", "Encode an image");
  enc_app->add_option("--image", enc.image, "Input PNG or PPM")->required();
  enc_app->add_option("--model", enc.model, "Codec checkpoint")->required();
  enc_app->add_option("--out", enc.out, "Output .sdvc file")->required();
  enc_app->add_option("--lambda-id", enc.lambda_id, "Rate point id")
      ->check(CLI::Range(0, 3));
  enc_app->add_option("--seed", enc.seed, "Seed");
  enc_app->add_flag("--reference-mode", enc.reference, "Double precision");
  enc_app->add_flag("--per-cell-bits", enc.per_cell_bits,
                    "Print estimated bits per cell");
  enc_app->add_option("--recon", enc.recon, "Write the reconstruction PNG");
  enc.mask.Register(enc_app);

  DecodeCmd dec;
  auto* dec_app = app.add_subcommand("decode", "Decode a bitstream");
  dec_app->add_option("--in", dec.in, "Input .sdvc file")->required();
  dec_app->add_option("--model", dec.model, "Codec checkpoint")->required();
  dec_app->add_option("--out", dec.out, "Output PNG")->required();
  dec_app->add_flag("--reference-mode", dec.reference, "Double precision");

  TrainCmd train;
  auto* train_app = app.add_subcommand("train", "Train the two-phase schedule");
  train_app->add_option("--config", train.config, "INI config");
  train_app->add_flag("--synthetic", train.synthetic, "Use synthetic scenes");
  train_app->add_option("--dataset", train.dataset, "Scene directory");
  train_app->add_flag("--smoke", train.smoke, "Two epochs per phase");
  train_app->add_option("--out-prefix", train.out_prefix, "Output prefix")
      ->required();
  train_app->add_option("--seed", train.seed, "Override the config seed");
  train_app->add_flag("--reference-mode", train.reference, "Double precision");

  SynthCmd synth;
  auto* synth_app = app.add_subcommand("synth", "Write synthetic scenes");
  synth_app->add_option("--out", synth.out, "Output directory")->required();
  synth_app->add_option("--count", synth.count, "Number of scenes");
  synth_app->add_option("--seed", synth.seed, "Seed");

  EvalCmd eval;
  auto* eval_app = app.add_subcommand("eval", "BD-rate report and plots");
  eval_app->add_option("--curves", eval.curve_files, "Curve CSV files");
  eval_app->add_option("--sweep", eval.sweep, "Encode-sweep INI");
  eval_app->add_option("--anchor", eval.anchor, "Anchor codec name");
  eval_app->add_option("--out", eval.out, "Output prefix")->required();
  eval_app->add_flag("--reference-mode", eval.reference, "Double precision");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (mask_app->parsed()) return mask.Run(out);
    if (enc_app->parsed()) return enc.Run(out);
    if (dec_app->parsed()) return dec.Run(out);
    if (train_app->parsed()) return train.Run(out);
    if (synth_app->parsed()) return synth.Run(out);
    if (eval_app->parsed()) return eval.Run(out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return ExitCodeFor(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << "\n";
    return kExitUnexpected;
  }
  return kExitUnexpected;
}

}  // namespace sdvc
