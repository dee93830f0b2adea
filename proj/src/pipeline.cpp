#include "unispoof/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "unispoof/gradcheck.hpp"

namespace unispoof {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void write_text(const std::string& text, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  out << text;
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed for '" + path.string() + "'");
}

bool parse_bool(const json& v, const std::string& what) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  fail(ErrorCode::kInvalidArgument, what + ": expected true or false, got " + v.dump());
}

template <typename T>
T get_as(const json& v, const std::string& what) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kInvalidArgument, what + ": unexpected value " + v.dump());
  }
}

// An explicit data directory is read as is; otherwise the dataset is
// regenerated from the config into <out>/data.
Dataset load_dataset(const RunConfig& c, json& report) {
  if (!c.data.empty()) {
    report["data"] = c.data;
    return read_dataset(c.data);
  }
  const fs::path dir = fs::path(c.out) / "data";
  Dataset ds = build_dataset(c.dataset, c.augment, c.seed);
  write_dataset(ds, dir);
  report["data"] = dir.string();
  return ds;
}

fs::path checkpoint_path(const RunConfig& c, const char* fallback) {
  const fs::path p = c.checkpoint.empty() ? fs::path(c.out) / fallback : fs::path(c.checkpoint);
  require(fs::exists(p), ErrorCode::kInvalidArgument,
          "checkpoint '" + p.string() + "' does not exist (train first or pass --checkpoint)");
  return p;
}

json eer_json(const EerResult& e) {
  return {{"eer", e.eer}, {"threshold", e.threshold}, {"far", e.far}, {"frr", e.frr}};
}

json pad_json(const PadReport& r) {
  return {{"threshold", 0.5},
          {"accuracy", r.at_half.accuracy},
          {"apcer", r.at_half.apcer},
          {"bpcer", r.at_half.bpcer},
          {"attacks", r.at_half.attacks},
          {"bona_fide", r.at_half.bona_fide},
          {"eer", eer_json(r.eer)}};
}

std::vector<ScoreRecord> pad_scores(const Dataset& ds, const PadReport& r) {
  std::vector<ScoreRecord> out;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = ds.records[r.records[i]];
    out.push_back({rec.sample_id, r.scores[i], rec.live ? 1 : 0});
  }
  return out;
}

json verification(const RunConfig& c, const FrmModel& model, const Dataset& ds, const fs::path& csv) {
  const auto pairs = sample_pairs(ds.records, c.genuine_pairs, c.impostor_pairs, derive_seed(c.seed, "pairs"));
  const VerifyResult v = verify(model, ds, pairs);
  std::vector<ScoreRecord> rows;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rows.push_back({ds.records[pairs[i].a].sample_id + "|" + ds.records[pairs[i].b].sample_id, v.scores[i],
                    pairs[i].genuine ? 1 : 0});
  }
  write_text(scores_csv(rows), csv);
  return {{"pairs", pairs.size()},
          {"genuine", c.genuine_pairs},
          {"impostor", c.impostor_pairs},
          {"accuracy", v.accuracy},
          {"eer", eer_json(v.eer)},
          {"scores", csv.string()}};
}

json split_counts(const Dataset& ds) {
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  for (const auto& r : ds.records) ++counts[r.split][r.spoof_kind];
  json j = json::object();
  for (const auto& [split, kinds] : counts) j[split] = kinds;
  return j;
}

json cmd_gen_data(const RunConfig& c, const json&) {
  json r;
  const Dataset ds = load_dataset(c, r);
  r["records"] = ds.records.size();
  r["counts"] = split_counts(ds);
  r["manifest"] = (fs::path(r["data"].get<std::string>()) / "manifest.csv").string();
  return r;
}

json cmd_augment(const RunConfig& c, const json& req) {
  require(req.contains("input"), ErrorCode::kInvalidArgument, "augment: --input is required");
  const std::string kind = req.value("kind", "spsc");
  require(kind == "spsc" || kind == "sdsc", ErrorCode::kInvalidArgument,
          "augment: --kind must be spsc or sdsc, got '" + kind + "'");
  const Image img = read_pnm(req.at("input").get<std::string>());
  require(img.channels == 3, ErrorCode::kInvalidArgument, "augment: input must be an RGB PPM");
  const fs::path output = req.contains("output") ? fs::path(req.at("output").get<std::string>())
                                                 : fs::path(c.out) / ("augmented_" + kind + ".ppm");
  json r = {{"kind", kind}, {"input", req.at("input")}, {"output", output.string()}, {"seed", c.seed}};
  if (kind == "spsc") {
    const SpscResult s = spsc(img, c.augment, c.seed);
    write_pnm(s.image, output);
    r["branch"] = branch_name(s.branch);
  } else {
    const Image mask = req.contains("mask") ? read_pnm(req.at("mask").get<std::string>())
                                            : default_face_mask(img.height, img.width);
    r["mask"] = req.contains("mask") ? req.at("mask") : json("default");
    const SdscResult s = sdsc(img, mask, c.augment, c.seed);
    write_pnm(s.image, output);
    fs::path mask_out = output;
    mask_out.replace_extension(".mask.pgm");
    write_pnm(s.mask, mask_out);
    r["blend_mask"] = mask_out.string();
  }
  return r;
}

json cmd_train_frm(const RunConfig& c, const json&) {
  json r;
  const Dataset ds = load_dataset(c, r);
  const FrmRun run = train_frm(c.train, c.model, ds);
  const fs::path ckpt = fs::path(c.out) / "frm.ckpt";
  save_checkpoint(run.model.to_checkpoint(), ckpt);
  r["checkpoint"] = ckpt.string();
  r["params_sha256"] = params_sha256(run.model.params());
  r["classes"] = run.model.class_identity.size();
  r["history"] = run.history;
  r["loss_ratio"] = run.history.final_loss / run.history.initial_loss;
  r["verification"] = verification(c, run.model, ds, fs::path(c.out) / "verify_scores.csv");
  return r;
}

json cmd_train_uad(const RunConfig& c, const json&) {
  json r;
  const FrmModel base = FrmModel::from_checkpoint(load_checkpoint(checkpoint_path(c, "frm.ckpt")));
  const Dataset ds = load_dataset(c, r);
  const UadRun run = train_uad(c.uad_train, base, ds);
  const fs::path ckpt = fs::path(c.out) / "uad.ckpt";
  save_checkpoint(uad_checkpoint(run, base, c.uad_train), ckpt);
  const fs::path csv = fs::path(c.out) / "uad_scores.csv";
  write_text(scores_csv(pad_scores(ds, run.test)), csv);
  r["checkpoint"] = ckpt.string();
  r["tap"] = run.tap;
  r["frozen"] = c.uad_train.freeze_backbone;
  r["backbone_sha256_before"] = run.backbone_hash_before;
  r["backbone_sha256_after"] = run.backbone_hash_after;
  r["backbone_unchanged"] = run.backbone_hash_before == run.backbone_hash_after;
  r["history"] = run.history;
  r["test"] = pad_json(run.test);
  r["scores"] = csv.string();
  // recognition re-measured with the backbone the head left behind
  FrmModel after = base;
  after.backbone = run.backbone;
  r["frm_after"] = verification(c, after, ds, fs::path(c.out) / "verify_after_uad_scores.csv");
  return r;
}

json cmd_sweep_blocks(const RunConfig& c, const json&) {
  json r;
  const FrmModel base = FrmModel::from_checkpoint(load_checkpoint(checkpoint_path(c, "frm.ckpt")));
  const Dataset ds = load_dataset(c, r);
  const SweepResult s = sweep_blocks(c.uad_train, base, ds);
  json rows = json::array();
  for (const auto& e : s.entries) {
    json row = pad_json(e.run.test);
    row["tap"] = e.tap;
    row["best_epoch"] = e.run.history.best_epoch;
    row["backbone_unchanged"] = e.run.backbone_hash_before == e.run.backbone_hash_after;
    rows.push_back(row);
  }
  r["rows"] = rows;
  r["best_tap"] = s.entries[s.best].tap;
  r["best_accuracy"] = s.entries[s.best].run.test.at_half.accuracy;
  return r;
}

json cmd_verify(const RunConfig& c, const json&) {
  json r;
  const fs::path ckpt = checkpoint_path(c, "frm.ckpt");
  const FrmModel model = FrmModel::from_checkpoint(load_checkpoint(ckpt));
  const Dataset ds = load_dataset(c, r);
  r["checkpoint"] = ckpt.string();
  r["verification"] = verification(c, model, ds, fs::path(c.out) / "verify_scores.csv");
  return r;
}

json cmd_eval(const RunConfig& c, const json&) {
  json r;
  const fs::path ckpt = checkpoint_path(c, "uad.ckpt");
  const UadModel m = UadModel::from_checkpoint(load_checkpoint(ckpt));
  const Dataset ds = load_dataset(c, r);
  const auto test = ds.indices("test");
  const PadReport rep = evaluate_uad(m.head, m.base.backbone, m.tap, ds, test);
  const fs::path csv = fs::path(c.out) / "eval_scores.csv";
  write_text(scores_csv(pad_scores(ds, rep)), csv);
  r["checkpoint"] = ckpt.string();
  r["tap"] = m.tap;
  r["test"] = pad_json(rep);
  r["scores"] = csv.string();
  return r;
}

json cmd_gradcheck(const RunConfig& c, const json& req) {
  const std::string only = req.value("only", "");
  json rows = json::array();
  bool ok = true;
  for (const auto& e : gradcheck_suite(c.seed)) {
    if (e.name.rfind(only, 0) != 0) continue;
    rows.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"checked", e.checked}, {"pass", e.pass()}});
    ok = ok && e.pass();
  }
  require(!rows.empty(), ErrorCode::kInvalidArgument, "gradcheck: no check name starts with '" + only + "'");
  return {{"tolerance", kGradTolerance}, {"checks", rows}, {"ok", ok}};
}

json cmd_count_params(const RunConfig& c, const json&) {
  const Tap tap = c.uad_train.tap;
  const ParamTable t = count_params(c.model, tap);
  json rows = json::array();
  for (const auto& row : t.rows) rows.push_back({{"component", row.component}, {"params", row.params}});
  return {{"preset", c.model.preset},
          {"classes", c.model.arcface.classes},
          {"tap", tap},
          {"rows", rows},
          {"backbone", t.get("backbone")},
          {"arcface_head", t.get("arcface_head")},
          {"uad_head", t.get("uad_head")},
          {"total", t.get("total")}};
}

using Command = json (*)(const RunConfig&, const json&);

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{
      {"gen-data", cmd_gen_data},     {"augment", cmd_augment},   {"train-frm", cmd_train_frm},
      {"train-uad", cmd_train_uad},   {"sweep-blocks", cmd_sweep_blocks},
      {"verify", cmd_verify},         {"eval", cmd_eval},         {"gradcheck", cmd_gradcheck},
      {"count-params", cmd_count_params}};
  return table;
}

}  // namespace

std::vector<std::string> pipeline_commands() {
  return {"gen-data", "augment", "train-frm", "train-uad", "sweep-blocks", "verify", "eval", "gradcheck", "count-params"};
}

RunConfig resolve_run_config(const json& request) {
  require(request.is_object(), ErrorCode::kInvalidArgument, "request: expected a JSON object");
  json base = json::object();
  if (request.contains("config") && !request.at("config").is_null()) {
    base = read_json_file(get_as<std::string>(request.at("config"), "config"));
  }
  const json set = request.value("set", json::object());
  require(set.is_object(), ErrorCode::kInvalidArgument, "request: 'set' must be an object");
  if (set.contains("preset")) {
    base["preset"] = get_as<std::string>(set.at("preset"), "preset");
  }
  RunConfig c = base.get<RunConfig>();
  for (const auto& [key, v] : set.items()) {
    if (key == "preset") continue;
    if (key == "seed") {
      c.seed = get_as<std::uint64_t>(v, "seed");
    } else if (key == "out") {
      c.out = get_as<std::string>(v, "out");
    } else if (key == "data") {
      c.data = get_as<std::string>(v, "data");
    } else if (key == "checkpoint") {
      c.checkpoint = get_as<std::string>(v, "checkpoint");
    } else if (key == "tap") {
      c.uad_train.tap = Tap::parse(v.is_string() ? v.get<std::string>() : v.dump());
    } else if (key == "freeze") {
      c.uad_train.freeze_backbone = parse_bool(v, "freeze");
    } else if (key == "classes") {
      c.model.arcface.classes = get_as<std::size_t>(v, "classes");
    } else {
      fail(ErrorCode::kInvalidArgument, "request: unknown override '" + key + "'");
    }
  }
  // the global seed drives both training runs
  c.train.seed = c.seed;
  c.uad_train.seed = c.seed;
  c.validate();
  return c;
}

json run_command(const std::string& command, const json& request) {
  const auto it = commands().find(command);
  if (it == commands().end()) {
    std::string known;
    for (const auto& n : pipeline_commands()) known += (known.empty() ? "" : ", ") + n;
    fail(ErrorCode::kInvalidArgument, "unknown command '" + command + "' (known: " + known + ")");
  }
  const RunConfig c = resolve_run_config(request);
  fs::create_directories(c.out);
  write_json_file(json(c), fs::path(c.out) / "config.json");

  json report = it->second(c, request);
  if (!report.contains("ok")) report["ok"] = true;
  report["schema_version"] = kReportSchemaVersion;
  report["command"] = command;
  report["config"] = c;
  if (request.value("timestamp", true)) report["timestamp"] = utc_now();
  write_json_file(report, fs::path(c.out) / (command + ".json"));
  return report;
}

}  // namespace unispoof
