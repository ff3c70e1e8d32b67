#include "fddlab/cli/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "fddlab/errors.hpp"

namespace fddlab::cli {

namespace {

struct Entry {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;  // throws std::invalid_argument
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

long long to_int(const std::string& v) {
  std::size_t used = 0;
  const long long x = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
  return x;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("not a boolean: '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <class T>
Entry int_key(std::string key, std::string doc, T RunConfig::*outer, int T::*field, int lo) {
  return {key, doc,
          [=](RunConfig& c, const std::string& v) {
            const long long x = to_int(v);
            if (x < lo) throw std::invalid_argument("must be >= " + std::to_string(lo));
            c.*outer.*field = static_cast<int>(x);
          },
          [=](const RunConfig& c) { return std::to_string(c.*outer.*field); }};
}

template <class T, class F>
Entry double_key(std::string key, std::string doc, T RunConfig::*outer, F T::*field) {
  return {key, doc, [=](RunConfig& c, const std::string& v) { c.*outer.*field = static_cast<F>(to_double(v)); },
          [=](const RunConfig& c) { return fmt_double(c.*outer.*field); }};
}

template <class T>
Entry bool_key(std::string key, std::string doc, T RunConfig::*outer, bool T::*field) {
  return {key, doc, [=](RunConfig& c, const std::string& v) { c.*outer.*field = to_bool(v); },
          [=](const RunConfig& c) { return std::string(c.*outer.*field ? "true" : "false"); }};
}

void add_teacher(std::vector<Entry>& e, const std::string& name, teachers::PretrainConfig RunConfig::*t) {
  const std::string p = "teacher." + name + ".";
  e.push_back(int_key(p + "iterations", "optimizer steps", t, &teachers::PretrainConfig::iterations, 0));
  e.push_back(int_key(p + "batch", "frames per step (video: batch / F clips)", t, &teachers::PretrainConfig::batch, 1));
  e.push_back(double_key(p + "lr", "Adam learning rate", t, &teachers::PretrainConfig::lr));
  e.push_back(bool_key(p + "cosine_decay", "anneal lr to 5% over the run", t, &teachers::PretrainConfig::cosine_decay));
  e.push_back(int_key(p + "holdout", "trailing items kept for held-out loss", t, &teachers::PretrainConfig::holdout, 1));
  e.push_back(int_key(p + "eval_every", "held-out loss period", t, &teachers::PretrainConfig::eval_every, 1));
  e.push_back(int_key(p + "grid_every", "sample grid period (0: off)", t, &teachers::PretrainConfig::grid_every, 0));
}

template <class E>
Entry enum_key(std::string key, std::string doc, E fdd::FddConfig::*field, std::vector<std::pair<std::string, E>> names) {
  return {key, doc,
          [=](RunConfig& c, const std::string& v) {
            for (const auto& [n, e] : names) {
              if (n == v) {
                c.fdd.*field = e;
                return;
              }
            }
            std::string opts;
            for (const auto& [n, e] : names) opts += (opts.empty() ? "" : ", ") + n;
            throw std::invalid_argument("expected one of " + opts);
          },
          [=](const RunConfig& c) {
            for (const auto& [n, e] : names) {
              if (e == c.fdd.*field) return n;
            }
            return std::string("?");
          }};
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    using R = RunConfig;
    using D = worldgen::DatasetConfig;
    std::vector<Entry> e;
    e.push_back({"run.seed", "seed for data, initialization, training and evaluation",
                 [](R& c, const std::string& v) {
                   if (!v.empty() && v[0] == '-') throw std::invalid_argument("seed must be non-negative");
                   std::size_t used = 0;
                   c.seed = std::stoull(v, &used);
                   if (used != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
                 },
                 [](const R& c) { return std::to_string(c.seed); }});
    e.push_back(int_key("world.H", "frame height", &R::data, &D::H, 8));
    e.push_back(int_key("world.W", "frame width", &R::data, &D::W, 8));
    e.push_back(int_key("world.F", "frames per clip", &R::data, &D::F, 2));
    e.push_back(int_key("data.n_backbone", "backbone frames", &R::data, &D::n_backbone, 1));
    e.push_back(int_key("data.n_edit", "edit pairs", &R::data, &D::n_edit, 1));
    e.push_back(int_key("data.n_video", "captioned clips", &R::data, &D::n_video, 1));
    e.push_back(int_key("data.n_fdd", "unsupervised (c_out, c_instruct, c_vid) triplets", &R::data, &D::n_fdd, 1));
    e.push_back(int_key("data.n_eval", "held-out eval items with oracle edits", &R::data, &D::n_eval, 1));
    e.push_back({"schedule.T", "diffusion steps",
                 [](R& c, const std::string& v) {
                   const long long x = to_int(v);
                   if (x < 2) throw std::invalid_argument("must be >= 2");
                   c.T = static_cast<int>(x);
                 },
                 [](const R& c) { return std::to_string(c.T); }});
    e.push_back({"schedule.kind", "linear or cosine",
                 [](R& c, const std::string& v) { c.schedule_kind = diffusion::parse_schedule_kind(v); },
                 [](const R& c) { return diffusion::to_string(c.schedule_kind); }});
    e.push_back({"schedule.zero_terminal", "rescale so alpha_bar[T] = 0",
                 [](R& c, const std::string& v) { c.zero_terminal = to_bool(v); },
                 [](const R& c) { return std::string(c.zero_terminal ? "true" : "false"); }});
    using B = models::BackboneConfig;
    e.push_back(int_key("model.c1", "channels at full resolution", &R::backbone, &B::c1, 1));
    e.push_back(int_key("model.c2", "channels at half and quarter resolution", &R::backbone, &B::c2, 1));
    e.push_back(int_key("model.d", "conditioning width", &R::backbone, &B::d, 1));
    e.push_back(int_key("model.groups", "group-norm groups", &R::backbone, &B::groups, 1));
    e.push_back(int_key("model.instr_channels", "instruction planes of the edit adapter", &R::edit_adapter,
                        &models::EditAdapterConfig::instr_channels, 1));
    e.push_back(int_key("model.max_frames", "longest clip the video adapter embeds", &R::video_adapter,
                        &models::VideoAdapterConfig::max_frames, 1));
    e.push_back(bool_key("model.first_frame", "condition the video adapter on an edited first frame",
                         &R::video_adapter, &models::VideoAdapterConfig::first_frame));
    e.push_back(int_key("model.lora_rank", "rank of theta_align", &R::lora, &models::LoraConfig::rank, 1));
    e.push_back(double_key("model.lora_alpha", "LoRA scale numerator", &R::lora, &models::LoraConfig::alpha));
    add_teacher(e, "backbone", &R::teacher_backbone);
    add_teacher(e, "edit", &R::teacher_edit);
    add_teacher(e, "video", &R::teacher_video);
    e.push_back(double_key("teacher.video.first_frame_prob", "chance a training clip sees its first frame",
                           &R::teacher_video, &teachers::PretrainConfig::first_frame_prob));
    using Fc = fdd::FddConfig;
    e.push_back(int_key("fdd.k", "student sampling steps", &R::fdd, &Fc::k, 1));
    e.push_back(double_key("fdd.alpha", "weight of the edit terms", &R::fdd, &Fc::alpha));
    e.push_back(double_key("fdd.beta", "weight of the video terms", &R::fdd, &Fc::beta));
    e.push_back(double_key("fdd.lambda", "SDS weight", &R::fdd, &Fc::lambda));
    e.push_back(int_key("fdd.warmup_sds_iters", "SDS-only iterations", &R::fdd, &Fc::warmup_sds_iters, 0));
    e.push_back(int_key("fdd.adversarial_iters", "iterations with discriminators", &R::fdd, &Fc::adversarial_iters, 0));
    e.push_back(enum_key("fdd.sds_t_sampling", "independent or shared (t, eps) draws for the two teachers",
                         &Fc::sds_t_sampling,
                         std::vector<std::pair<std::string, fdd::SdsSampling>>{
                             {"independent", fdd::SdsSampling::Independent}, {"shared", fdd::SdsSampling::Shared}}));
    e.push_back(enum_key("fdd.g_loss_form", "paper or standard_hinge", &Fc::g_loss_form,
                         std::vector<std::pair<std::string, fdd::GLossForm>>{
                             {"paper", fdd::GLossForm::Paper}, {"standard_hinge", fdd::GLossForm::StandardHinge}}));
    e.push_back(enum_key("fdd.weighting", "SDS weight c(t): unit or snr", &Fc::weighting,
                         std::vector<std::pair<std::string, fdd::Weighting>>{{"unit", fdd::Weighting::Unit},
                                                                             {"snr", fdd::Weighting::Snr}}));
    e.push_back(bool_key("fdd.kbin", "draw student steps from k bins", &R::fdd, &Fc::kbin));
    e.push_back(double_key("fdd.lr", "student Adam learning rate", &R::fdd, &Fc::lr));
    e.push_back(double_key("fdd.disc_lr", "discriminator Adam learning rate", &R::fdd, &Fc::disc_lr));
    e.push_back(int_key("fdd.batch", "clips per iteration", &R::fdd, &Fc::batch, 1));
    e.push_back(int_key("fdd.teacher_steps", "DDIM steps of the teacher samples", &R::fdd, &Fc::teacher_steps, 1));
    e.push_back(int_key("fdd.checkpoint_every", "checkpoint period (0: final only)", &R::fdd, &Fc::checkpoint_every, 0));
    e.push_back({"fdd.disc_width", "discriminator projection width",
                 [](R& c, const std::string& v) {
                   const long long x = to_int(v);
                   if (x < 1) throw std::invalid_argument("must be >= 1");
                   c.fdd.disc.width = static_cast<int>(x);
                 },
                 [](const R& c) { return std::to_string(c.fdd.disc.width); }});
    using Ec = eval::EvalConfig;
    e.push_back(int_key("eval.steps", "video DDIM steps when editing eval clips", &R::eval, &Ec::steps, 1));
    e.push_back(int_key("eval.first_frame_steps", "psi DDIM steps for the first frame", &R::eval,
                        &Ec::first_frame_steps, 1));
    e.push_back(int_key("eval.grid_items", "items dumped as PPM grids", &R::eval, &Ec::grid_items, 0));
    return e;
  }();
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  for (auto* t : {&teacher_backbone, &teacher_edit, &teacher_video}) {
    t->lr = 2e-3;
    t->cosine_decay = true;
    t->grid_every = 1000;
  }
  teacher_backbone.iterations = 3000;
  teacher_edit.iterations = 2000;
  teacher_video.iterations = 2000;
}

std::vector<KeyInfo> config_keys() {
  std::vector<KeyInfo> out;
  for (const auto& e : entries()) out.push_back({e.key, e.doc});
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(lineno, "expected 'key = value'");
    const Entry* entry = nullptr;
    for (const auto& e : entries()) {
      if (e.key == key) entry = &e;
    }
    if (!entry) throw ConfigError(lineno, "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(lineno, "key '" + key + "' set twice");
    try {
      entry->set(cfg, value);
    } catch (const std::exception& ex) {
      throw ConfigError(lineno, key + ": " + ex.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingDependency(path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str());
  return cfg;
}

std::string resolved_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : resolved_text(cfg)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void stamp(const std::filesystem::path& dir, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.resolved.txt", std::ios::binary) << resolved_text(cfg);
  std::ofstream(dir / "config.hash", std::ios::binary) << config_hash(cfg) << '\n';
}

diffusion::NoiseSchedule make_schedule(const RunConfig& cfg) {
  return diffusion::make_schedule(cfg.T, cfg.schedule_kind, cfg.zero_terminal);
}

}  // namespace fddlab::cli
