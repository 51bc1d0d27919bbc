#pragma once

#include <iosfwd>
#include <string>

namespace misode {

// Subcommand drivers behind the C API; each consumes a JSON configuration
// document and writes progress notes to `log`. Errors surface as ConfigError
// / DataError / RuntimeFailure.
void run_datagen(const std::string& config_json, std::ostream& log);
void run_train(const std::string& config_json, std::ostream& log);
void run_predict(const std::string& config_json, std::ostream& log);
void run_eval(const std::string& config_json, std::ostream& log);
void run_report(const std::string& config_json, std::ostream& log);

}  // namespace misode
