#include "deepbv/config.hpp"

#include "deepbv/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace deepbv {

Profile parse_profile(const std::string& s) {
  if (s == "full") return Profile::Full;
  if (s == "desk") return Profile::Desk;
  throw std::invalid_argument("unknown profile '" + s + "' (expected full or desk)");
}

std::string to_string(Profile p) { return p == Profile::Full ? "full" : "desk"; }

RunConfig RunConfig::full() {
  RunConfig c;
  c.profile = Profile::Full;
  c.loc_sgd.batch_size = 200;
  c.seg_sgd.batch_size = 4;
  return c;
}

RunConfig RunConfig::desk() {
  RunConfig c = full();
  c.profile = Profile::Desk;
  c.phantom = PhantomConfig::desk();
  c.loc_plan.input_side = 24;
  c.loc_plan.widths = {4, 8, 16, 32};
  c.loc_plan.hidden = 64;
  c.seg_plan.input_side = 48;
  c.seg_plan.full_res_width = 4;
  c.seg_plan.encoder = {4, 8, 16, 32, 32};
  c.seg_plan.fusion_width = 4;
  c.labeling.window = 24;
  c.loc_sgd.batch_size = 20;
  c.loc_max_examples = 2000;
  c.seg_per_epoch = 80;
  // 80 subvolumes per epoch instead of 22000: a tenfold rate makes up for
  // the far shorter run.
  c.seg_sgd.learning_rate = 0.1;
  c.pipeline.box_side = 48;
  // 300 voxels scaled by the box volume ratio (48/128)^3.
  c.pipeline.min_component = 16;
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto s = trim(v);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument(key + ": cannot parse '" + v + "'");
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

bool parse_bool(const std::string& key, const std::string& v) {
  const auto s = trim(v);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

template <typename T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& v) {
  std::array<T, N> out{};
  std::stringstream ss(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == N) throw std::invalid_argument(key + ": expected " + std::to_string(N) + " values");
    out[i++] = parse_number<T>(key, item);
  }
  if (i != N) throw std::invalid_argument(key + ": expected " + std::to_string(N) + " values");
  return out;
}

template <typename T, std::size_t N>
std::string format_list(const std::array<T, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + format_number(a[i]);
  return out;
}

LayerOrder parse_order(const std::string& key, const std::string& v) {
  const auto s = trim(v);
  if (s == "relu_bn") return LayerOrder::ReluThenBn;
  if (s == "bn_relu") return LayerOrder::BnThenRelu;
  throw std::invalid_argument(key + ": expected relu_bn or bn_relu");
}

std::string format_order(LayerOrder o) { return o == LayerOrder::ReluThenBn ? "relu_bn" : "bn_relu"; }

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string& key, const std::string&)> set;
};

template <typename T>
Field number(T& ref) {
  return {[&ref] { return format_number(ref); }, [&ref](const std::string& k, const std::string& v) { ref = parse_number<T>(k, v); }};
}

template <typename T, std::size_t N>
Field list(std::array<T, N>& ref) {
  return {[&ref] { return format_list(ref); },
          [&ref](const std::string& k, const std::string& v) { ref = parse_list<T, N>(k, v); }};
}

Field boolean(bool& ref) {
  return {[&ref] { return std::string(ref ? "true" : "false"); },
          [&ref](const std::string& k, const std::string& v) { ref = parse_bool(k, v); }};
}

Field order(LayerOrder& ref) {
  return {[&ref] { return format_order(ref); }, [&ref](const std::string& k, const std::string& v) { ref = parse_order(k, v); }};
}

void add_sgd(std::map<std::string, Field>& f, const std::string& p, SgdConfig& s) {
  f[p + ".lr"] = number(s.learning_rate);
  f[p + ".momentum"] = number(s.momentum);
  f[p + ".weight_decay"] = number(s.weight_decay);
  f[p + ".epochs"] = number(s.epochs);
  f[p + ".decay_factor"] = number(s.decay_factor);
  f[p + ".decay_after_epoch"] = number(s.decay_after_epoch);
  f[p + ".batch_size"] = number(s.batch_size);
}

std::map<std::string, Field> fields(RunConfig& c) {
  std::map<std::string, Field> f;
  f["seed"] = number(c.seed);
  f["threads"] = number(c.threads);

  auto& ph = c.phantom;
  f["phantom.dims_min"] = list(ph.dims_min);
  f["phantom.dims_max"] = list(ph.dims_max);
  f["phantom.spacing"] = list(ph.spacing);
  f["phantom.body_fill"] = number(ph.body_fill);
  f["phantom.bv_blobs_min"] = number(ph.bv_blobs_min);
  f["phantom.bv_blobs_max"] = number(ph.bv_blobs_max);
  f["phantom.bv_fraction_min"] = number(ph.bv_fraction_min);
  f["phantom.bv_fraction_max"] = number(ph.bv_fraction_max);
  f["phantom.bv_max_extent"] = number(ph.bv_max_extent);
  f["phantom.background"] = number(ph.background);
  f["phantom.tissue"] = number(ph.tissue);
  f["phantom.bv"] = number(ph.bv);
  f["phantom.speckle_looks"] = number(ph.speckle_looks);
  f["phantom.missing_boundary_prob"] = number(ph.missing_boundary_prob);
  f["phantom.missing_boundary_dim"] = number(ph.missing_boundary_dim);
  f["phantom.motion_prob"] = number(ph.motion_prob);
  f["phantom.motion_max_shift"] = number(ph.motion_max_shift);

  auto& lp = c.loc_plan;
  f["loc.input_side"] = number(lp.input_side);
  f["loc.widths"] = list(lp.widths);
  f["loc.hidden"] = number(lp.hidden);
  f["loc.kernel"] = number(lp.kernel);
  f["loc.block_dropout"] = number(lp.block_dropout);
  f["loc.hidden_dropout"] = number(lp.hidden_dropout);
  f["loc.order"] = order(lp.order);
  f["loc.max_examples"] = number(c.loc_max_examples);
  f["loc.ensemble"] = number(c.loc_ensemble);

  auto& sp = c.seg_plan;
  f["seg.input_side"] = number(sp.input_side);
  f["seg.full_res_width"] = number(sp.full_res_width);
  f["seg.encoder"] = list(sp.encoder);
  f["seg.lrp_layers"] = number(sp.lrp_layers);
  f["seg.cross_lrp"] = boolean(sp.cross_lrp);
  f["seg.fusion_width"] = number(sp.fusion_width);
  f["seg.kernel"] = number(sp.kernel);
  f["seg.order"] = order(sp.order);
  f["seg.per_epoch"] = number(c.seg_per_epoch);
  f["seg.min_fraction"] = number(c.seg_min_fraction);
  f["seg.ensemble"] = number(c.seg_ensemble);

  auto& lb = c.labeling;
  f["label.window"] = number(lb.window);
  f["label.stride_pos"] = number(lb.stride_pos);
  f["label.stride_neg"] = number(lb.stride_neg);
  f["label.positive_above"] = number(lb.positive_above);
  f["label.negative_below"] = number(lb.negative_below);

  add_sgd(f, "loc_sgd", c.loc_sgd);
  add_sgd(f, "seg_sgd", c.seg_sgd);

  auto& pc = c.pipeline;
  f["pipeline.box_side"] = number(pc.box_side);
  f["pipeline.scan_stride"] = number(pc.scan_stride);
  f["pipeline.loc_threshold"] = number(pc.loc_threshold);
  f["pipeline.seg_threshold"] = number(pc.seg_threshold);
  f["pipeline.min_component"] = number(pc.min_component);
  f["pipeline.connectivity"] = number(pc.connectivity);
  f["pipeline.window_batch"] = number(pc.window_batch);
  return f;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  auto f = fields(*this);
  const auto it = f.find(trim(key));
  if (it == f.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second.set(it->first, value);
}

void RunConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::string& path) {
  const auto bytes = read_file(path);
  apply_text(std::string(bytes.begin(), bytes.end()));
}

std::map<std::string, std::string> RunConfig::entries() const {
  std::map<std::string, std::string> out;
  for (auto& [k, f] : fields(const_cast<RunConfig&>(*this))) out[k] = f.get();
  out["profile"] = to_string(profile);
  return out;
}

void RunConfig::validate() const {
  phantom.validate();
  loc_sgd.validate();
  seg_sgd.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (pipeline.box_side < 2 || pipeline.box_side % 2) fail("pipeline.box_side must be even");
  if (labeling.window != pipeline.window()) fail("label.window must equal pipeline.box_side / 2");
  if (loc_plan.input_side != labeling.window) fail("loc.input_side must equal label.window");
  if (seg_plan.input_side != pipeline.box_side) fail("seg.input_side must equal pipeline.box_side");
  if (seg_plan.input_side % 16) fail("seg.input_side must be divisible by 16");
  if (loc_ensemble < 1 || seg_ensemble < 1) fail("ensemble sizes must be positive");
  if (pipeline.scan_stride < 1 || labeling.stride_pos < 1 || labeling.stride_neg < 1) fail("strides must be positive");
  if (!(seg_min_fraction > 0 && seg_min_fraction <= 1)) fail("seg.min_fraction must lie in (0, 1]");
  if (threads < 1) fail("threads must be positive");
}

}  // namespace deepbv
