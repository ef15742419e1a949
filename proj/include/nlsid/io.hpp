#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "nlsid/bla.hpp"
#include "nlsid/decouple.hpp"
#include "nlsid/narx.hpp"
#include "nlsid/nonparam.hpp"
#include "nlsid/pnlss.hpp"
#include "nlsid/polybasis.hpp"
#include "nlsid/signals.hpp"
#include "nlsid/validate.hpp"
#include "nlsid/volterra.hpp"

namespace nlsid::io {

using Json = nlohmann::ordered_json;

/// Throws ConfigError naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& context);
/// Typed field access with ConfigError messages that name the field.
[[nodiscard]] const Json& require(const Json& j, const char* key, const std::string& context);

[[nodiscard]] Json matrix_to_json(const Eigen::MatrixXd& m);  // array of rows
[[nodiscard]] Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& context);
[[nodiscard]] Json vector_to_json(const Eigen::VectorXd& v);
[[nodiscard]] Eigen::VectorXd vector_from_json(const Json& j, const std::string& context);

[[nodiscard]] Json to_json(const MultisineSpec& s);
[[nodiscard]] MultisineSpec multisine_from_json(const Json& j);

[[nodiscard]] Json to_json(const PolyMap& p);
[[nodiscard]] PolyMap polymap_from_json(const Json& j);

[[nodiscard]] Json to_json(const NarxModel& m);
[[nodiscard]] NarxModel narx_from_json(const Json& j);

[[nodiscard]] Json to_json(const DecoupledFunction& d);
[[nodiscard]] DecoupledFunction decoupled_from_json(const Json& j);

[[nodiscard]] Json to_json(const PnlssModel& m);
[[nodiscard]] PnlssModel pnlss_from_json(const Json& j);

[[nodiscard]] Json to_json(const VolterraModel& m);
[[nodiscard]] VolterraModel volterra_from_json(const Json& j);

[[nodiscard]] Json to_json(const BlaModel& b);
[[nodiscard]] BlaModel bla_from_json(const Json& j);

[[nodiscard]] Json to_json(const DistortionReport& r);
[[nodiscard]] Json to_json(const ProcessNoiseReport& r);
[[nodiscard]] Json to_json(const FitReport& r);
[[nodiscard]] Json to_json(const ValidationReport& r);
[[nodiscard]] Json to_json(const VariabilityReport& r);
[[nodiscard]] Json to_json(const ApproxReport& r);

[[nodiscard]] Json read_json(const std::filesystem::path& path);
/// Pretty-printed, newline-terminated; doubles use the shortest round-trip form.
void write_json(const std::filesystem::path& path, const Json& j);

/// Columns sample,input,output with a `# fs=..., period=..., periods=...` header line.
void write_record_csv(const std::filesystem::path& path, const SignalRecord& rec);
/// Reads a file written by write_record_csv, or a plain two-column input,output file when
/// `period_samples` is given.
[[nodiscard]] SignalRecord read_record_csv(const std::filesystem::path& path, double sample_rate_hz = 0.0,
                                           std::size_t period_samples = 0);
/// Plot-ready table; all columns must share a length.
void write_columns_csv(const std::filesystem::path& path, const std::vector<std::string>& headers,
                       const std::vector<std::vector<double>>& columns);

/// Shortest decimal that round-trips to the same double.
[[nodiscard]] std::string format_double(double v);

}  // namespace nlsid::io
