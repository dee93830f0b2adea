#pragma once

// One entry point per command-line subcommand. Each run resolves its
// configuration, writes artifacts and a JSON report into the run directory
// and returns the report.
//
// Request keys (all optional):
//   config     path to a RunConfig JSON file
//   set        flag overrides: seed, out, preset, tap, freeze, classes,
//              checkpoint, data
//   timestamp  false drops the report timestamp
//   input, mask, output, kind   for `augment`
//   only       check-name prefix for `gradcheck`
//
// Reports carry schema_version, command, ok, the resolved config and the
// command's results. The resolved config is also written to <out>/config.json.

#include <string>
#include <vector>

#include "unispoof/config.hpp"

namespace unispoof {

constexpr int kReportSchemaVersion = 1;

std::vector<std::string> pipeline_commands();

// Request JSON -> fully resolved configuration (file, then preset, then flags).
RunConfig resolve_run_config(const json& request);

// Throws Error on validation and runtime failures. A report with ok=false
// means the command ran but a check it performs did not hold.
json run_command(const std::string& command, const json& request);

}  // namespace unispoof
