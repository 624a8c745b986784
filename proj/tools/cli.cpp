#include "cli.hpp"

#include "deepbv/checkpoint.hpp"
#include "deepbv/config.hpp"
#include "deepbv/metrics.hpp"
#include "deepbv/parallel.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace deepbv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMaskSuffix = ".mask.dbv";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string mask_path_for(const std::string& image) {
  const std::string base = ends_with(image, ".dbv") ? image.substr(0, image.size() - 4) : image;
  return base + kMaskSuffix;
}

std::string volume_name(const std::string& path) {
  std::string f = fs::path(path).filename().string();
  if (ends_with(f, kMaskSuffix)) return f.substr(0, f.size() - std::string(kMaskSuffix).size());
  if (ends_with(f, ".dbv")) return f.substr(0, f.size() - 4);
  return f;
}

/// Intensity volumes in a directory (every *.dbv that is not a mask), sorted.
std::vector<std::string> list_images(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string p = e.path().string();
    if (e.is_regular_file() && ends_with(p, ".dbv") && !ends_with(p, kMaskSuffix)) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> list_masks(const std::string& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && ends_with(e.path().string(), kMaskSuffix)) out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

void load_pairs(const std::string& dir, std::vector<Image>& images, std::vector<Mask>& masks) {
  for (const auto& p : list_images(dir)) {
    images.push_back(read_image(p));
    masks.push_back(read_mask(mask_path_for(p)));
  }
  if (images.empty()) throw std::invalid_argument("no volumes in " + dir);
}

std::vector<Net> load_nets(const std::vector<std::string>& paths) {
  std::vector<Net> nets;
  for (const auto& p : paths) nets.push_back(load_checkpoint(p));
  return nets;
}

std::vector<const Net*> pointers(const std::vector<Net>& nets) {
  std::vector<const Net*> out;
  for (const auto& n : nets) out.push_back(&n);
  return out;
}

int parse_axis(const std::string& s) {
  if (s == "x" || s == "0") return 0;
  if (s == "y" || s == "1") return 1;
  if (s == "z" || s == "2") return 2;
  throw std::invalid_argument("axis must be x, y or z");
}

std::array<int, 3> parse_triple(const std::string& s) {
  std::array<int, 3> out{};
  std::stringstream ss(s);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == 3) break;
    out[i++] = std::stoi(item);
  }
  if (i != 3 || ss.good()) throw std::invalid_argument("expected x,y,z but got '" + s + "'");
  return out;
}

struct Globals {
  int threads = 1;
  bool json = false;
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::string profile = "full";
  std::string config;
};

RunConfig make_config(const Globals& g) {
  RunConfig c = RunConfig::for_profile(parse_profile(g.profile));
  if (!g.config.empty()) c.apply_file(g.config);
  if (g.seed_set) c.seed = g.seed;
  c.threads = g.threads;
  c.validate();
  return c;
}

// Human-readable "key value" lines, or one JSON object per line.
void emit(std::ostream& out, bool as_json, const json& record) {
  if (as_json) {
    out << record.dump() << '\n';
    return;
  }
  for (auto it = record.begin(); it != record.end(); ++it) {
    out << it.key() << ' ';
    if (it->is_string())
      out << it->get<std::string>();
    else
      out << it->dump();
    out << '\n';
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Localize-then-segment engine for 3D volumes", "deepbv"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (1 is fully deterministic)")->check(CLI::PositiveNumber);
  app.add_flag("--json", g.json, "Machine-readable JSON-lines output");
  app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) {
    g.seed = s;
    g.seed_set = true;
  }, "Random seed");
  app.add_option("--profile", g.profile, "Constant profile")->check(CLI::IsMember({"full", "desk"}));
  app.add_option("--config", g.config, "key = value file applied over the profile")->check(CLI::ExistingFile);

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "Synthetic volumes")->require_subcommand(1);
  auto* gen = phantom->add_subcommand("gen", "Generate phantom volumes and masks");
  std::string gen_out, gen_mask, gen_dir;
  int gen_count = 1;
  gen->add_option("--out", gen_out, "Image path (mask goes to NAME.mask.dbv)");
  gen->add_option("--mask-out", gen_mask, "Mask path");
  gen->add_option("--dir", gen_dir, "Output directory for --count volumes");
  gen->add_option("--count", gen_count, "Number of volumes (seeds seed, seed+1, ...)")->check(CLI::PositiveNumber);

  // train loc / seg
  auto* train = app.add_subcommand("train", "Train networks")->require_subcommand(1);
  std::string tr_data, tr_out, tr_log;
  int tr_member = 0;
  auto add_train_opts = [&](CLI::App* sub) {
    sub->add_option("--data", tr_data, "Directory of NAME.dbv / NAME.mask.dbv pairs")->required();
    sub->add_option("--out", tr_out, "Checkpoint path (.dbvw)")->required();
    sub->add_option("--member", tr_member, "Ensemble member index; offsets the seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--log", tr_log, "Per-step metrics log");
  };
  auto* train_loc = train->add_subcommand("loc", "Train one localization classifier");
  add_train_opts(train_loc);
  auto* train_seg = train->add_subcommand("seg", "Train one segmentation network");
  add_train_opts(train_seg);

  // infer localize / segment / e2e
  auto* infer = app.add_subcommand("infer", "Run trained networks")->require_subcommand(1);
  std::vector<std::string> in_volumes, in_loc, in_seg;
  std::string in_data, in_out, in_box, in_report;
  auto* localize_cmd = infer->add_subcommand("localize", "Find the cavity box");
  localize_cmd->add_option("--volume", in_volumes, "Input volume")->required();
  localize_cmd->add_option("--loc", in_loc, "Classifier checkpoint (repeat for an ensemble)")->required();
  auto* segment_cmd = infer->add_subcommand("segment", "Segment inside a given box");
  segment_cmd->add_option("--volume", in_volumes, "Input volume")->required();
  segment_cmd->add_option("--seg", in_seg, "Segmentation checkpoint (repeat for an OR ensemble)")->required();
  segment_cmd->add_option("--box", in_box, "Box anchor x,y,z in padded full-resolution coordinates")->required();
  segment_cmd->add_option("--out", in_out, "Output mask path")->required();
  auto* e2e_cmd = infer->add_subcommand("e2e", "Localize, segment and clean up");
  e2e_cmd->add_option("--volume", in_volumes, "Input volume (repeatable)");
  e2e_cmd->add_option("--data", in_data, "Directory of volumes; masks found there give DSC");
  e2e_cmd->add_option("--loc", in_loc, "Classifier checkpoint (repeatable)")->required();
  e2e_cmd->add_option("--seg", in_seg, "Segmentation checkpoint (repeatable)")->required();
  e2e_cmd->add_option("--out-dir", in_out, "Directory for NAME.mask.dbv predictions")->required();
  e2e_cmd->add_option("--report", in_report, "JSON-lines report path (default: stdout)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score predicted masks against ground truth");
  std::string ev_pred, ev_gt, ev_boxes;
  eval_cmd->add_option("--pred", ev_pred, "Directory of predicted NAME.mask.dbv")->required();
  eval_cmd->add_option("--gt", ev_gt, "Directory of ground-truth NAME.mask.dbv")->required();
  eval_cmd->add_option("--boxes", ev_boxes, "e2e report whose boxes are scored for containment");

  // net params / rf
  auto* net_cmd = app.add_subcommand("net", "Network architecture facts")->require_subcommand(1);
  std::string net_kind = "seg", net_mode = "actual";
  bool net_layers = false;
  auto* params_cmd = net_cmd->add_subcommand("params", "Parameter counts");
  params_cmd->add_option("--net", net_kind, "loc or seg")->check(CLI::IsMember({"loc", "seg"}));
  params_cmd->add_option("--mode", net_mode, "Counting mode")->check(CLI::IsMember({"actual", "dense-equivalent"}));
  params_cmd->add_flag("--layers", net_layers, "Also list every layer");
  auto* rf_cmd = net_cmd->add_subcommand("rf", "Receptive field at the fusion head");
  rf_cmd->add_option("--net", net_kind, "loc or seg")->check(CLI::IsMember({"loc", "seg"}));

  // export slice
  auto* export_cmd = app.add_subcommand("export", "Export images")->require_subcommand(1);
  auto* slice_cmd = export_cmd->add_subcommand("slice", "Write one slice as PGM");
  std::string ex_volume, ex_mask, ex_axis = "z", ex_out;
  int ex_index = 0;
  slice_cmd->add_option("--volume", ex_volume, "Input volume")->required();
  slice_cmd->add_option("--mask", ex_mask, "Optional mask volume");
  slice_cmd->add_option("--axis", ex_axis, "x, y or z");
  slice_cmd->add_option("--index", ex_index, "Slice index")->required();
  slice_cmd->add_option("--out", ex_out, "Output .pgm")->required();

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "deepbv: " << e.what() << '\n';
    // Show the usage of the deepest subcommand that was reached.
    const CLI::App* shown = &app;
    for (const CLI::App* sub = shown; sub;) {
      const auto subs = sub->get_subcommands();
      sub = subs.empty() ? nullptr : subs.front();
      if (sub) shown = sub;
    }
    err << shown->help();
    return 2;
  }

  try {
    const RunConfig cfg = make_config(g);
    set_num_threads(cfg.threads);

    if (gen->parsed()) {
      std::vector<std::pair<std::string, std::string>> targets;
      if (!gen_dir.empty()) {
        fs::create_directories(gen_dir);
        for (int i = 0; i < gen_count; ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "phantom_%03d", i);
          const std::string img = (fs::path(gen_dir) / (std::string(name) + ".dbv")).string();
          targets.emplace_back(img, mask_path_for(img));
        }
      } else {
        if (gen_out.empty()) throw std::invalid_argument("phantom gen needs --out or --dir");
        if (gen_count != 1) throw std::invalid_argument("--count needs --dir");
        targets.emplace_back(gen_out, gen_mask.empty() ? mask_path_for(gen_out) : gen_mask);
      }
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const std::uint64_t seed = cfg.seed + i;
        const Phantom p = generate_phantom(cfg.phantom, seed);
        write_volume(p.image, targets[i].first);
        write_volume(p.mask, targets[i].second);
        emit(out, g.json,
             {{"image", targets[i].first}, {"mask", targets[i].second}, {"seed", seed}, {"dims", p.image.dims},
              {"bv_voxels", count_nonzero(p.mask)}, {"missing_boundary", p.missing_boundary}, {"motion", p.motion}});
      }
      return 0;
    }

    if (train_loc->parsed() || train_seg->parsed()) {
      std::vector<Image> images;
      std::vector<Mask> masks;
      load_pairs(tr_data, images, masks);
      std::ofstream log_file;
      TrainOptions opt;
      if (!tr_log.empty()) {
        log_file.open(tr_log, std::ios::trunc);
        if (!log_file) throw std::runtime_error("cannot write " + tr_log);
        opt.log = &log_file;
      }
      const std::uint64_t seed = cfg.seed + std::uint64_t(tr_member);
      Net net;
      std::size_t examples = 0;
      if (train_loc->parsed()) {
        const auto set = build_localization_set(images, masks, cfg.labeling, cfg.loc_max_examples, seed);
        examples = set.samples.size();
        opt.sgd = cfg.loc_sgd;
        net = train_localization(set, opt, seed, cfg.loc_plan);
      } else {
        const auto set = build_segmentation_set(images, masks, cfg.pipeline.box_side, cfg.seg_min_fraction);
        examples = set.samples.size();
        opt.sgd = cfg.seg_sgd;
        opt.per_epoch_sample = cfg.seg_per_epoch;
        net = train_segmentation(set, opt, seed, cfg.seg_plan);
      }
      save_checkpoint(net, tr_out);
      emit(out, g.json,
           {{"checkpoint", tr_out}, {"net", train_loc->parsed() ? "loc" : "seg"}, {"volumes", images.size()},
            {"examples", examples}, {"parameters", count_parameters(net).total}, {"seed", seed}});
      return 0;
    }

    if (localize_cmd->parsed()) {
      const auto nets = load_nets(in_loc);
      for (const auto& path : in_volumes) {
        const PaddedImage padded = pad_to_min(read_image(path), cfg.pipeline.box_side);
        const auto r = localize(padded.volume, pointers(nets), cfg.pipeline);
        emit(out, g.json,
             {{"volume", volume_name(path)}, {"box_anchor", r.box.anchor}, {"box_side", r.box.side},
              {"center", r.center}, {"windows", r.windows_scanned}, {"positive_windows", r.positives.size()},
              {"ensemble", r.ensemble_size}, {"fallback", r.fallback}});
      }
      return 0;
    }

    if (segment_cmd->parsed()) {
      if (in_volumes.size() != 1) throw std::invalid_argument("infer segment takes exactly one --volume");
      const auto nets = load_nets(in_seg);
      const PaddedImage padded = pad_to_min(read_image(in_volumes.front()), cfg.pipeline.box_side);
      const BoundingBox box{parse_triple(in_box), cfg.pipeline.box_side};
      const auto r = segment_box(padded.volume, box, pointers(nets), cfg.pipeline.seg_threshold);
      const Mask mask = crop(r.mask, {0, 0, 0}, padded.original);
      write_volume(mask, in_out);
      emit(out, g.json, {{"volume", volume_name(in_volumes.front())}, {"mask", in_out}, {"mask_voxels", count_nonzero(mask)}});
      return 0;
    }

    if (e2e_cmd->parsed()) {
      std::vector<std::string> inputs = in_volumes;
      if (!in_data.empty())
        for (const auto& p : list_images(in_data)) inputs.push_back(p);
      if (inputs.empty()) throw std::invalid_argument("infer e2e needs --volume or --data");
      const auto loc = load_nets(in_loc);
      const auto seg = load_nets(in_seg);
      fs::create_directories(in_out);
      std::ofstream report_file;
      std::ostream* report = &out;
      if (!in_report.empty()) {
        report_file.open(in_report, std::ios::trunc);
        if (!report_file) throw std::runtime_error("cannot write " + in_report);
        report = &report_file;
      }
      for (const auto& path : inputs) {
        const auto r = segment_end_to_end(read_image(path), pointers(loc), pointers(seg), cfg.pipeline);
        const std::string name = volume_name(path);
        write_volume(r.segmentation.mask, (fs::path(in_out) / (name + kMaskSuffix)).string());
        std::optional<double> score;
        if (fs::exists(mask_path_for(path))) score = dsc(r.segmentation.mask, read_mask(mask_path_for(path)));
        *report << inference_record(name, r, score) << '\n';
      }
      return 0;
    }

    if (eval_cmd->parsed()) {
      std::vector<Mask> preds, gts;
      std::vector<std::string> names;
      for (const auto& gt : list_masks(ev_gt)) {
        const std::string name = volume_name(gt);
        const std::string pred = (fs::path(ev_pred) / (name + kMaskSuffix)).string();
        if (!fs::exists(pred)) throw std::invalid_argument("no prediction for " + name + " in " + ev_pred);
        gts.push_back(read_mask(gt));
        preds.push_back(read_mask(pred));
        names.push_back(name);
      }
      if (names.empty()) throw std::invalid_argument("no ground-truth masks in " + ev_gt);
      std::vector<BoundingBox> boxes;
      if (!ev_boxes.empty()) {
        std::map<std::string, BoundingBox> by_name;
        std::ifstream f(ev_boxes);
        if (!f) throw std::runtime_error("cannot read " + ev_boxes);
        std::string line;
        while (std::getline(f, line)) {
          if (line.empty()) continue;
          const auto j = json::parse(line);
          by_name[j.at("volume")] = {j.at("box").at("anchor").get<std::array<int, 3>>(), j.at("box").at("side").get<int>()};
        }
        for (const auto& n : names) {
          if (!by_name.count(n)) throw std::invalid_argument("no box for " + n + " in " + ev_boxes);
          boxes.push_back(by_name[n]);
        }
      }
      const auto rep = evaluate(preds, gts, boxes.empty() ? nullptr : &boxes, &names);
      if (g.json) {
        out << rep.to_json_lines();
      } else {
        for (const auto& v : rep.volumes) {
          out << v.name << " dsc " << v.dsc;
          if (v.containment) out << " containment " << *v.containment;
          out << '\n';
        }
        out << "mean_dsc " << rep.mean_dsc << "\nfailures " << rep.failures << '\n';
        if (rep.has_boxes) out << "boxes_full " << rep.boxes_full << "\nboxes_95 " << rep.boxes_95 << '\n';
      }
      return 0;
    }

    if (params_cmd->parsed()) {
      const NetSpec spec = net_kind == "seg" ? segmentation_spec(cfg.seg_plan) : localization_spec(cfg.loc_plan);
      const auto mode = net_mode == "actual" ? CountMode::Actual : CountMode::DenseEquivalent;
      const auto pc = count_parameters(spec, mode);
      if (net_layers) {
        for (const auto& e : pc.layers)
          emit(out, g.json, {{"node", e.node}, {"kind", to_string(e.kind)}, {"count", e.count}});
      }
      emit(out, g.json, {{"net", net_kind}, {"mode", net_mode}, {"total", pc.total}});
      return 0;
    }

    if (rf_cmd->parsed()) {
      const NetSpec spec = net_kind == "seg" ? segmentation_spec(cfg.seg_plan) : localization_spec(cfg.loc_plan);
      const auto rf = receptive_field(spec);
      emit(out, g.json, {{"net", net_kind}, {"rf", rf.size}, {"jump", rf.jump}, {"node", rf.node}, {"input_side", spec.input_side}});
      return 0;
    }

    if (slice_cmd->parsed()) {
      const Image v = read_image(ex_volume);
      Mask m;
      if (!ex_mask.empty()) m = read_mask(ex_mask);
      const auto written = export_slice(v, ex_mask.empty() ? nullptr : &m, parse_axis(ex_axis), ex_index, ex_out);
      emit(out, g.json, {{"written", written}});
      return 0;
    }
  } catch (const std::exception& e) {
    err << "deepbv: error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace deepbv::cli
