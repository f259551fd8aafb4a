#include "opidyn/io.hpp"

#include <charconv>
#include <fstream>
#include <json.hpp>

#include "opidyn/errors.hpp"

namespace opidyn {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t fnv1a64_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot open file for checksum: " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return fnv1a64(bytes);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::vector<std::string> header) : n_cols_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) body_ += ',';
        body_ += header[i];
    }
    body_ += '\n';
}

void CsvWriter::add_row(const std::vector<double>& row) {
    if (row.size() != n_cols_) throw ConfigError("CSV row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) body_ += ',';
        body_ += format_double(row[i]);
    }
    body_ += '\n';
}

void CsvWriter::add_row_mixed(const std::vector<std::string>& row) {
    if (row.size() != n_cols_) throw ConfigError("CSV row width mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) body_ += ',';
        body_ += row[i];
    }
    body_ += '\n';
}

void CsvWriter::write(const std::filesystem::path& p) const {
    write_text_file(p, body_);
}

void write_text_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + p.string());
    out << content;
}

void RunManifest::add_output(const std::filesystem::path& p) {
    outputs.push_back({p.filename().string(), fnv1a64_file(p)});
}

void RunManifest::write(const std::filesystem::path& p) const {
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["subcommand"] = subcommand;
    j["config_hash"] = config_hash;
    j["base_seed"] = base_seed;
    j["wall_clock_s"] = wall_clock_s;
    auto arr = nlohmann::json::array();
    for (const auto& e : outputs) arr.push_back({{"file", e.file}, {"fnv1a64", e.checksum}});
    j["outputs"] = arr;
    write_text_file(p, j.dump(2) + "\n");
}

}  // namespace opidyn
