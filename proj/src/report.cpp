#include "fibsim/report.hpp"

#include "fibsim/error.hpp"
#include "fibsim/formats.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

namespace fibsim {

using nlohmann::ordered_json;

void Table::add(std::vector<double> row) {
    if (row.size() != columns.size())
        throw DomainError("table row has " + std::to_string(row.size()) + " values for " +
                          std::to_string(columns.size()) + " columns");
    rows.push_back(std::move(row));
}

std::size_t Table::column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw DomainError("table has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> Table::values(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
}

bool operator==(const Table& a, const Table& b) {
    if (a.columns != b.columns || a.rows.size() != b.rows.size()) return false;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        if (a.rows[i].size() != b.rows[i].size()) return false;
        for (std::size_t k = 0; k < a.rows[i].size(); ++k)
            if (std::bit_cast<std::uint64_t>(a.rows[i][k]) != std::bit_cast<std::uint64_t>(b.rows[i][k])) return false;
    }
    return true;
}

bool operator==(const CampaignReport& a, const CampaignReport& b) {
    return a.kind == b.kind && a.tool_version == b.tool_version && a.schema_version == b.schema_version &&
           a.seed == b.seed && a.config_digest == b.config_digest && a.config == b.config && a.summary == b.summary &&
           a.wall_model == b.wall_model && a.metadata == b.metadata && a.tables == b.tables;
}

std::string table_to_csv(const Table& table) {
    std::string out;
    for (std::size_t k = 0; k < table.columns.size(); ++k) {
        if (k) out += ',';
        out += table.columns[k];
    }
    out += '\n';
    for (const auto& row : table.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out += ',';
            out += formats::format_double(row[k]);
        }
        out += '\n';
    }
    return out;
}

Table table_from_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    Table t;
    std::size_t number = 0;
    if (!std::getline(in, line)) throw ParseError(source, "empty table");
    ++number;
    for (auto f : formats::split_csv(line)) t.columns.emplace_back(f);
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) continue;
        const auto fields = formats::split_csv(line);
        if (fields.size() != t.columns.size())
            throw ParseError(source + ":" + std::to_string(number), "expected " + std::to_string(t.columns.size()) + " fields");
        std::vector<double> row;
        row.reserve(fields.size());
        for (std::size_t k = 0; k < fields.size(); ++k)
            row.push_back(formats::parse_double(fields[k], source + ":" + std::to_string(number) + " field '" +
                                                               t.columns[k] + "'"));
        t.rows.push_back(std::move(row));
    }
    return t;
}

ordered_json report_manifest(const CampaignReport& r, bool include_metadata) {
    ordered_json j;
    j["format"] = "fibsim-report";
    j["schema_version"] = r.schema_version;
    j["tool_version"] = r.tool_version;
    j["kind"] = r.kind;
    j["seed"] = r.seed;
    j["config_digest"] = r.config_digest;
    j["config"] = r.config;
    j["summary"] = r.summary;
    j["wall_model"] = r.wall_model;
    ordered_json files = ordered_json::object();
    for (const auto& [name, table] : r.tables)
        files[name] = {{"sha256", formats::sha256_hex(table_to_csv(table))}, {"rows", table.rows.size()}};
    j["files"] = files;
    if (include_metadata) j["metadata"] = r.metadata;
    return j;
}

void persist_report(const CampaignReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, table] : report.tables) formats::write_text_file(dir / name, table_to_csv(table));
    formats::write_text_file(dir / "manifest.json", report_manifest(report).dump(2) + "\n");
}

CampaignReport load_report(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw IntegrityError(manifest_path.string() + ": manifest not found");
    ordered_json j;
    try {
        j = ordered_json::parse(formats::read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(manifest_path.string() + ": unreadable manifest (" + e.what() + ")");
    }
    CampaignReport r;
    try {
        if (j.at("format").get<std::string>() != "fibsim-report")
            throw IntegrityError(manifest_path.string() + ": not a fibsim report");
        r.schema_version = j.at("schema_version").get<int>();
        r.tool_version = j.at("tool_version").get<std::string>();
        r.kind = j.at("kind").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config_digest = j.at("config_digest").get<std::string>();
        r.config = j.at("config");
        r.summary = j.value("summary", ordered_json::object());
        r.wall_model = j.value("wall_model", ordered_json::object());
        r.metadata = j.value("metadata", ordered_json::object());
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(manifest_path.string() + ": malformed manifest (" + e.what() + ")");
    }
    if (r.tool_version != kToolVersion)
        r.load_warnings.push_back("report written by tool version " + r.tool_version + " (this is " + kToolVersion + ")");
    if (r.schema_version > kReportSchemaVersion)
        r.load_warnings.push_back("report schema " + std::to_string(r.schema_version) + " is newer than supported (" +
                                  std::to_string(kReportSchemaVersion) + ")");

    if (formats::sha256_hex(r.config.dump()) != r.config_digest)
        throw IntegrityError(manifest_path.string() + ": config digest mismatch");

    const auto files = j.value("files", ordered_json::object());
    for (const auto& [name, info] : files.items()) {
        const auto path = dir / name;
        if (!std::filesystem::exists(path)) throw IntegrityError(path.string() + ": missing report table");
        const std::string text = formats::read_text_file(path);
        if (formats::sha256_hex(text) != info.value("sha256", std::string()))
            throw IntegrityError(path.string() + ": digest mismatch (file modified or truncated)");
        try {
            r.tables[name] = table_from_csv(text, path.string());
        } catch (const ParseError& e) {
            throw IntegrityError(e.what());
        }
    }
    return r;
}

}  // namespace fibsim
