#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fibsim {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kReportSchemaVersion = 1;

/// Numeric table persisted as CSV. Missing values are NaN.
struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void add(std::vector<double> row);
    std::size_t column(const std::string& name) const;
    std::vector<double> values(const std::string& name) const;
    friend bool operator==(const Table& a, const Table& b);
};

struct CampaignReport {
    std::string kind;
    std::string tool_version = kToolVersion;
    int schema_version = kReportSchemaVersion;
    std::uint64_t seed = 0;
    std::string config_digest;
    nlohmann::ordered_json config;
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
    nlohmann::ordered_json wall_model = nlohmann::ordered_json::object();
    /// Run-specific data (timestamps, worker count); excluded from determinism checks.
    nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
    std::map<std::string, Table> tables;  // file name -> table
    std::vector<std::string> load_warnings;

    friend bool operator==(const CampaignReport& a, const CampaignReport& b);
};

std::string table_to_csv(const Table& table);
Table table_from_csv(const std::string& text, const std::string& source);

/// Manifest JSON without the metadata block.
nlohmann::ordered_json report_manifest(const CampaignReport& report, bool include_metadata = true);

/// Writes manifest.json plus one CSV per table; the manifest stores SHA-256 digests of every file.
void persist_report(const CampaignReport& report, const std::filesystem::path& dir);
/// Verifies file and config digests (IntegrityError on mismatch or truncation). A report
/// from another tool version loads with a warning naming that version.
CampaignReport load_report(const std::filesystem::path& dir);

}  // namespace fibsim
