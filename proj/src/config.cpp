#include "alignps/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace alignps {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(c)) && c != '[' && c != ']') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: expected a boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  for (const auto& tok : split_list(v)) out.push_back(std::stoi(tok));
  return out;
}

std::vector<double> parse_double_list(const std::string& v) {
  std::vector<double> out;
  for (const auto& tok : split_list(v)) {
    if (tok == "inf") {
      out.push_back(std::numeric_limits<double>::infinity());
    } else {
      out.push_back(std::stod(tok));
    }
  }
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

template <typename T>
std::string list_str(const std::vector<T>& v) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    if constexpr (std::is_same_v<T, double>) {
      if (std::isinf(v[i])) {
        os << "inf";
        continue;
      }
    }
    os << v[i];
  }
  os << "]";
  return os.str();
}

}  // namespace

ModelPreset preset_from_string(const std::string& s) {
  if (s == "alignps") return ModelPreset::kAlignPs;
  if (s == "roialignps") return ModelPreset::kRoiAlignPs;
  if (s == "roialign_star") return ModelPreset::kRoiAlignStar;
  if (s == "baseline_fcos_reid") return ModelPreset::kBaselineFcosReid;
  throw std::invalid_argument("unknown preset '" + s + "'");
}

std::string preset_name(ModelPreset p) {
  switch (p) {
    case ModelPreset::kAlignPs: return "alignps";
    case ModelPreset::kRoiAlignPs: return "roialignps";
    case ModelPreset::kRoiAlignStar: return "roialign_star";
    case ModelPreset::kBaselineFcosReid: return "baseline_fcos_reid";
  }
  return "alignps";
}

EmbeddingSource embedding_source_from_string(const std::string& s) {
  if (s == "default") return EmbeddingSource::kDefault;
  if (s == "fused") return EmbeddingSource::kFused;
  if (s == "align") return EmbeddingSource::kAlignOnly;
  if (s == "roi") return EmbeddingSource::kRoiOnly;
  throw std::invalid_argument("unknown embedding source '" + s + "'");
}

void apply_preset(RunConfig& cfg, ModelPreset preset) {
  cfg.preset = preset;
  switch (preset) {
    case ModelPreset::kAlignPs:
      cfg.afa.lateral_deform = true;
      cfg.afa.output_deform = true;
      cfg.afa.fuse_mode = FuseMode::kConcat;
      cfg.mutual = MutualConfig{};
      cfg.reid_weight = 1.0;
      break;
    case ModelPreset::kBaselineFcosReid:
      cfg.afa.lateral_deform = false;
      cfg.afa.output_deform = false;
      cfg.afa.fuse_mode = FuseMode::kSum;
      cfg.mutual = MutualConfig{};
      cfg.reid_weight = 1.0;
      break;
    case ModelPreset::kRoiAlignPs:
      cfg.afa.lateral_deform = true;
      cfg.afa.output_deform = true;
      cfg.afa.fuse_mode = FuseMode::kConcat;
      cfg.train_with_rpn = true;
      cfg.reid_weight = 1.0;
      cfg.mutual = MutualConfig{};
      cfg.mutual.mi = true;  // the reported full model trains with the MI loss
      break;
    case ModelPreset::kRoiAlignStar:
      cfg.afa.lateral_deform = true;
      cfg.afa.output_deform = true;
      cfg.afa.fuse_mode = FuseMode::kConcat;
      cfg.train_with_rpn = false;  // the starred row lives in the no-RPN block
      cfg.reid_weight = 0.0;       // AlignPS branch concentrates on detection
      cfg.mutual = MutualConfig{};
      break;
  }
}

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto fuse_from = [](const std::string& v) {
    if (v == "concat") return FuseMode::kConcat;
    if (v == "sum") return FuseMode::kSum;
    throw std::invalid_argument("afa.fuse_mode must be concat|sum");
  };
  auto levels_from = [](const std::string& v) {
    if (v == "p3") return AfaLevels::kP3Only;
    if (v == "p3p4") return AfaLevels::kP3P4;
    if (v == "p3p4p5") return AfaLevels::kP3P4P5;
    throw std::invalid_argument("afa.levels must be p3|p3p4|p3p4p5");
  };

  if (key == "preset") apply_preset(cfg, preset_from_string(value));
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "batch_size") cfg.batch_size = std::stoi(value);
  else if (key == "data.dir") cfg.data_dir = value;
  else if (key == "run.dir") cfg.run_dir = value;
  else if (key == "debug_probe") cfg.debug_probe = parse_bool(value);

  else if (key == "backbone.channels") cfg.backbone.channels = parse_int_list(value);
  else if (key == "backbone.gn_groups") cfg.backbone.gn_groups = std::stoi(value);

  else if (key == "afa.lateral_deform") cfg.afa.lateral_deform = parse_bool(value);
  else if (key == "afa.output_deform") cfg.afa.output_deform = parse_bool(value);
  else if (key == "afa.fuse_mode") cfg.afa.fuse_mode = fuse_from(value);
  else if (key == "afa.levels") cfg.afa.levels = levels_from(value);
  else if (key == "afa.d") cfg.afa.d = std::stoi(value);

  else if (key == "fcos.tower_convs") cfg.fcos.tower_convs = std::stoi(value);
  else if (key == "fcos.center_radius") cfg.fcos.center_radius = std::stod(value);
  else if (key == "fcos.score_thresh") cfg.fcos.score_thresh = std::stod(value);
  else if (key == "fcos.nms_iou") cfg.fcos.nms_iou = std::stod(value);
  else if (key == "fcos.max_det") cfg.fcos.max_det = std::stoi(value);
  else if (key == "fcos.level_ranges") cfg.fcos.level_ranges = parse_double_list(value);
  else if (key == "fcos.focal_alpha") cfg.fcos.focal_alpha = std::stod(value);
  else if (key == "fcos.focal_gamma") cfg.fcos.focal_gamma = std::stod(value);
  else if (key == "fcos.gn_groups") cfg.fcos.gn_groups = std::stoi(value);

  else if (key == "rpn.anchor_base") cfg.rpn.anchor_base = std::stod(value);
  else if (key == "rpn.ratios") cfg.rpn.ratios = parse_double_list(value);
  else if (key == "rpn.post_nms_topk") cfg.rpn.post_nms_topk = std::stoi(value);
  else if (key == "rpn.pre_nms_topk") cfg.rpn.pre_nms_topk = std::stoi(value);
  else if (key == "rpn.pos_iou") cfg.rpn.pos_iou = std::stod(value);
  else if (key == "rpn.neg_iou") cfg.rpn.neg_iou = std::stod(value);
  else if (key == "rpn.nms_iou") cfg.rpn.nms_iou = std::stod(value);
  else if (key == "rpn.stride") cfg.rpn.stride = std::stoi(value);

  else if (key == "roi.train_with_rpn") cfg.train_with_rpn = parse_bool(value);
  else if (key == "roi.pool") cfg.roi_pool = std::stoi(value);
  else if (key == "roi.train_rois") cfg.roi_train_rois = std::stoi(value);
  else if (key == "roi.stage_convs") cfg.roi_stage_convs = std::stoi(value);
  else if (key == "roi.reid_weight") cfg.roi_reid_weight = std::stod(value);

  else if (key == "reid.loss") {
    if (value == "oim") cfg.reid_loss = ReidLossKind::kOim;
    else if (value == "toim") cfg.reid_loss = ReidLossKind::kToim;
    else throw std::invalid_argument("reid.loss must be oim|toim");
  }
  else if (key == "reid.weight") cfg.reid_weight = std::stod(value);
  else if (key == "reid.warmup_steps") cfg.reid_warmup_steps = std::stoi(value);
  else if (key == "reid.queue_size") cfg.queue_size = std::stoi(value);
  else if (key == "reid.temperature") cfg.oim_temperature = std::stod(value);
  else if (key == "reid.momentum") cfg.oim_momentum = std::stod(value);
  else if (key == "reid.focal") cfg.focal_oim = parse_bool(value);
  else if (key == "reid.focal_gamma") cfg.focal_oim_gamma = std::stod(value);
  else if (key == "reid.triplet_margin") cfg.triplet.margin = std::stod(value);
  else if (key == "reid.samples_per_id") cfg.triplet.samples_per_id = std::stoi(value);
  else if (key == "reid.use_lut_anchors") cfg.triplet.use_lut_anchors = parse_bool(value);

  else if (key == "mutual.modes") {
    cfg.mutual.mi = cfg.mutual.kl = cfg.mutual.dv = false;
    for (const auto& m : split_list(value)) {
      if (m == "mi") cfg.mutual.mi = true;
      else if (m == "kl") cfg.mutual.kl = true;
      else if (m == "dv") cfg.mutual.dv = true;
      else if (m == "none") continue;
      else throw std::invalid_argument("mutual.modes entries must be mi|kl|dv|none");
    }
  }
  else if (key == "mutual.w_mi") cfg.mutual.w_mi = std::stod(value);
  else if (key == "mutual.w_kl") cfg.mutual.w_kl = std::stod(value);
  else if (key == "mutual.w_dv") cfg.mutual.w_dv = std::stod(value);
  else if (key == "mutual.kl_teacher") {
    if (value == "align") cfg.mutual.kl_teacher = KlTeacher::kAlign;
    else if (value == "roi") cfg.mutual.kl_teacher = KlTeacher::kRoi;
    else if (value == "none") cfg.mutual.kl_teacher = KlTeacher::kNone;
    else throw std::invalid_argument("mutual.kl_teacher must be align|roi|none");
  }
  else if (key == "mutual.mine_hidden") cfg.mutual.mine_hidden = std::stoi(value);

  else if (key == "optimizer.lr") cfg.optimizer.lr = std::stod(value);
  else if (key == "optimizer.momentum") cfg.optimizer.momentum = std::stod(value);
  else if (key == "optimizer.weight_decay") cfg.optimizer.weight_decay = std::stod(value);
  else if (key == "optimizer.offset_lr_mult") cfg.optimizer.offset_lr_mult = std::stod(value);

  else if (key == "schedule.epochs") cfg.schedule.epochs = std::stoi(value);
  else if (key == "schedule.decay_epochs") cfg.schedule.decay_epochs = parse_int_list(value);
  else if (key == "schedule.decay_factor") cfg.schedule.decay_factor = std::stod(value);
  else if (key == "schedule.warmup_steps") cfg.schedule.warmup_steps = std::stoi(value);

  else if (key == "train.multiscale") cfg.multiscale = parse_bool(value);
  else if (key == "train.ms_min") cfg.ms_min = std::stoi(value);
  else if (key == "train.ms_max") cfg.ms_max = std::stoi(value);

  else throw std::invalid_argument("unknown config key '" + key + "'");
}

namespace {

std::vector<std::pair<std::string, std::string>> parse_toml_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(line_no) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (!value.empty() && value.front() == '[') {
      std::string cleaned;
      for (char ch : value)
        if (ch != '"') cleaned.push_back(ch);
      value = cleaned;
    }
    if (!section.empty()) key = section + "." + key;
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

}  // namespace

void load_config_toml(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  for (const auto& [key, value] : parse_toml_lines(text)) apply_kv(cfg, key, value);
}

std::string config_to_toml(const RunConfig& c) {
  std::ostringstream os;
  os << "preset = \"" << preset_name(c.preset) << "\"\n";
  os << "seed = " << c.seed << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "debug_probe = " << bool_str(c.debug_probe) << "\n\n";
  os << "[data]\ndir = \"" << c.data_dir << "\"\n\n";
  os << "[run]\ndir = \"" << c.run_dir << "\"\n\n";
  os << "[backbone]\nchannels = " << list_str(c.backbone.channels)
     << "\ngn_groups = " << c.backbone.gn_groups << "\n\n";
  os << "[afa]\nlateral_deform = " << bool_str(c.afa.lateral_deform)
     << "\noutput_deform = " << bool_str(c.afa.output_deform) << "\nfuse_mode = \""
     << (c.afa.fuse_mode == FuseMode::kConcat ? "concat" : "sum") << "\"\nlevels = \""
     << (c.afa.levels == AfaLevels::kP3Only
             ? "p3"
             : (c.afa.levels == AfaLevels::kP3P4 ? "p3p4" : "p3p4p5"))
     << "\"\nd = " << c.afa.d << "\n\n";
  os << "[fcos]\ntower_convs = " << c.fcos.tower_convs
     << "\ncenter_radius = " << c.fcos.center_radius
     << "\nscore_thresh = " << c.fcos.score_thresh << "\nnms_iou = " << c.fcos.nms_iou
     << "\nmax_det = " << c.fcos.max_det << "\nfocal_alpha = " << c.fcos.focal_alpha
     << "\nfocal_gamma = " << c.fcos.focal_gamma << "\ngn_groups = " << c.fcos.gn_groups
     << "\nlevel_ranges = " << list_str(c.fcos.level_ranges) << "\n\n";
  os << "[rpn]\nanchor_base = " << c.rpn.anchor_base << "\nratios = " << list_str(c.rpn.ratios)
     << "\npre_nms_topk = " << c.rpn.pre_nms_topk
     << "\npost_nms_topk = " << c.rpn.post_nms_topk << "\npos_iou = " << c.rpn.pos_iou
     << "\nneg_iou = " << c.rpn.neg_iou << "\nnms_iou = " << c.rpn.nms_iou
     << "\nstride = " << c.rpn.stride << "\n\n";
  os << "[roi]\ntrain_with_rpn = " << bool_str(c.train_with_rpn) << "\npool = " << c.roi_pool
     << "\ntrain_rois = " << c.roi_train_rois << "\nstage_convs = " << c.roi_stage_convs << "\nreid_weight = " << c.roi_reid_weight
     << "\n\n";
  os << "[reid]\nloss = \"" << (c.reid_loss == ReidLossKind::kToim ? "toim" : "oim")
     << "\"\nweight = " << c.reid_weight << "\nwarmup_steps = " << c.reid_warmup_steps << "\nqueue_size = " << c.queue_size
     << "\ntemperature = " << c.oim_temperature << "\nmomentum = " << c.oim_momentum
     << "\nfocal = " << bool_str(c.focal_oim) << "\nfocal_gamma = " << c.focal_oim_gamma
     << "\ntriplet_margin = " << c.triplet.margin
     << "\nsamples_per_id = " << c.triplet.samples_per_id
     << "\nuse_lut_anchors = " << bool_str(c.triplet.use_lut_anchors) << "\n\n";
  std::string modes;
  if (c.mutual.mi) modes += "\"mi\"";
  if (c.mutual.kl) modes += std::string(modes.empty() ? "" : ", ") + "\"kl\"";
  if (c.mutual.dv) modes += std::string(modes.empty() ? "" : ", ") + "\"dv\"";
  os << "[mutual]\nmodes = [" << modes << "]\nw_mi = " << c.mutual.w_mi
     << "\nw_kl = " << c.mutual.w_kl << "\nw_dv = " << c.mutual.w_dv << "\nkl_teacher = \""
     << (c.mutual.kl_teacher == KlTeacher::kAlign
             ? "align"
             : (c.mutual.kl_teacher == KlTeacher::kRoi ? "roi" : "none"))
     << "\"\nmine_hidden = " << c.mutual.mine_hidden << "\n\n";
  os << "[optimizer]\nlr = " << c.optimizer.lr << "\nmomentum = " << c.optimizer.momentum
     << "\nweight_decay = " << c.optimizer.weight_decay
     << "\noffset_lr_mult = " << c.optimizer.offset_lr_mult << "\n\n";
  os << "[schedule]\nepochs = " << c.schedule.epochs
     << "\ndecay_epochs = " << list_str(c.schedule.decay_epochs)
     << "\ndecay_factor = " << c.schedule.decay_factor
     << "\nwarmup_steps = " << c.schedule.warmup_steps << "\n\n";
  os << "[train]\nmultiscale = " << bool_str(c.multiscale) << "\nms_min = " << c.ms_min
     << "\nms_max = " << c.ms_max << "\n";
  return os.str();
}

RunConfig config_from_toml_string(const std::string& text) {
  RunConfig cfg;
  for (const auto& [key, value] : parse_toml_lines(text)) {
    if (key == "preset") {
      // Resolved configs carry every field explicitly; re-applying the
      // preset here would clobber them.
      cfg.preset = preset_from_string(value);
      continue;
    }
    apply_kv(cfg, key, value);
  }
  return cfg;
}

}  // namespace alignps
