// Command-line front end over the C API. Prints the JSON report on stdout.
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "unispoof/unispoof.h"

namespace {

using nlohmann::json;

struct Flags {
  std::string config;
  unsigned long long seed = 0;
  std::string out = "run";
  std::string preset = "swin-desk";
  std::string tap = "3";
  std::string freeze = "true";
  bool no_timestamp = false;
  std::string checkpoint;
  std::string data;
  std::size_t classes = 16;
  bool all = false;
  std::string only;
  std::string input;
  std::string mask;
  std::string output;
  std::string kind = "spsc";
};

struct Sub {
  CLI::App* app = nullptr;
  std::map<std::string, CLI::Option*> opts;
};

// Flags every subcommand accepts.
void add_common(Sub& s, Flags& f) {
  s.opts["config"] = s.app->add_option("--config", f.config, "run config JSON file (flags override it)");
  s.opts["seed"] = s.app->add_option("--seed", f.seed, "global seed")->capture_default_str();
  s.opts["out"] = s.app->add_option("--out", f.out, "run directory")->capture_default_str();
  s.opts["preset"] = s.app->add_option("--preset", f.preset, "model preset name or model JSON path")->capture_default_str();
  s.opts["tap"] = s.app->add_option("--tap", f.tap, "attack-detection tap: stage-3 block index or 'final'")
                      ->capture_default_str();
  s.opts["freeze"] = s.app->add_option("--freeze", f.freeze, "freeze the backbone while training the attack head")
                         ->check(CLI::IsMember({"true", "false"}))
                         ->capture_default_str();
  s.app->add_flag("--no-timestamp", f.no_timestamp, "omit the report timestamp");
}

void add_dataset(Sub& s, Flags& f) {
  s.opts["data"] = s.app->add_option("--data", f.data, "existing dataset directory (default: regenerate into <out>/data)");
}

void add_checkpoint(Sub& s, Flags& f, const std::string& fallback) {
  s.opts["checkpoint"] =
      s.app->add_option("--checkpoint", f.checkpoint, "model checkpoint (default: <out>/" + fallback + ")");
}

json request_for(const Sub& s, const Flags& f) {
  json req = json::object();
  json set = json::object();
  const auto given = [&](const char* name) {
    const auto it = s.opts.find(name);
    return it != s.opts.end() && it->second->count() > 0;
  };
  if (given("config")) req["config"] = f.config;
  if (given("seed")) set["seed"] = f.seed;
  if (given("out")) set["out"] = f.out;
  if (given("preset")) set["preset"] = f.preset;
  if (given("tap")) set["tap"] = f.tap;
  if (given("freeze")) set["freeze"] = f.freeze == "true";
  if (given("checkpoint")) set["checkpoint"] = f.checkpoint;
  if (given("data")) set["data"] = f.data;
  if (given("classes")) set["classes"] = f.classes;
  if (given("only")) req["only"] = f.only;
  if (given("input")) req["input"] = f.input;
  if (given("mask")) req["mask"] = f.mask;
  if (given("output")) req["output"] = f.output;
  if (given("kind")) req["kind"] = f.kind;
  req["set"] = set;
  req["timestamp"] = !f.no_timestamp;
  return req;
}

int exit_code(int status) {
  switch (status) {
    case UNISPOOF_OK: return 0;
    case UNISPOOF_INVALID_ARGUMENT:
    case UNISPOOF_SHAPE: return 1;
    default: return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face recognition with attack detection on a shared transformer backbone"};
  app.set_version_flag("--version", std::string(unispoof_version()));
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Flags f;
  std::map<std::string, Sub> subs;
  const auto sub = [&](const std::string& name, const std::string& about) -> Sub& {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, about);
    add_common(s, f);
    return s;
  };

  add_dataset(sub("gen-data", "generate the synthetic dataset into <out>/data"), f);

  Sub& aug = sub("augment", "apply a simulated spoof to one PPM image");
  aug.opts["input"] = aug.app->add_option("--input", f.input, "input RGB image (binary PPM)")->required();
  aug.opts["mask"] = aug.app->add_option("--mask", f.mask, "face mask (binary PGM) for sdsc (default: centred ellipse)");
  aug.opts["output"] = aug.app->add_option("--output", f.output, "output PPM (default: <out>/augmented_<kind>.ppm)");
  aug.opts["kind"] = aug.app->add_option("--kind", f.kind, "spsc (print/replay) or sdsc (digital forgery)")
                         ->check(CLI::IsMember({"spsc", "sdsc"}))
                         ->capture_default_str();

  add_dataset(sub("train-frm", "train the backbone with the recognition head"), f);

  Sub& uad = sub("train-uad", "train the attack-detection head on a trained backbone");
  add_dataset(uad, f);
  add_checkpoint(uad, f, "frm.ckpt");

  Sub& sweep = sub("sweep-blocks", "train one attack head per tap and report each");
  add_dataset(sweep, f);
  add_checkpoint(sweep, f, "frm.ckpt");

  Sub& ver = sub("verify", "face verification metrics for a checkpoint");
  add_dataset(ver, f);
  add_checkpoint(ver, f, "frm.ckpt");

  Sub& ev = sub("eval", "attack-detection metrics on the test split");
  add_dataset(ev, f);
  add_checkpoint(ev, f, "uad.ckpt");

  Sub& gc = sub("gradcheck", "finite-difference gradient checks in double precision");
  gc.opts["all"] = gc.app->add_flag("--all", f.all, "run every check (the default)");
  gc.opts["only"] = gc.app->add_option("--only", f.only, "run checks whose name starts with this prefix")->excludes(gc.opts["all"]);

  Sub& cp = sub("count-params", "analytic parameter counts per component");
  cp.opts["classes"] = cp.app->add_option("--classes", f.classes, "recognition classes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (const auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    char* report = nullptr;
    const int status = unispoof_run(name.c_str(), request_for(s, f).dump().c_str(), &report);
    if (report != nullptr) {
      std::cout << report << "\n";
      unispoof_string_free(report);
    }
    if (status != UNISPOOF_OK) {
      std::cerr << "unispoof " << name << ": " << unispoof_status_string(status) << ": " << unispoof_last_error()
                << "\n";
    }
    return exit_code(status);
  }
  return 1;
}
