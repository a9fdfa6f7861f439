#include "fibsim/formats.hpp"

#include "fibsim/error.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace fibsim::formats {

namespace {

std::string at_line(const std::string& source, std::size_t line) { return source + ":" + std::to_string(line); }

std::string at_field(const std::string& source, std::size_t line, std::string_view field) {
    return at_line(source, line) + " field '" + std::string(field) + "'";
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

struct LineReader {
    LineReader(std::istream& stream, std::string name) : in(stream), source(std::move(name)) {}

    std::istream& in;
    std::string source;
    std::size_t number = 0;
    std::string text;

    bool next() {
        while (std::getline(in, text)) {
            ++number;
            if (!text.empty() && text.back() == '\r') text.pop_back();
            if (!trim(text).empty()) return true;
        }
        return false;
    }
};

void expect_header(LineReader& r, std::initializer_list<std::string_view> names) {
    const auto fields = split_csv(r.text);
    bool ok = fields.size() == names.size();
    std::size_t k = 0;
    for (auto it = names.begin(); ok && it != names.end(); ++it, ++k) ok = trim(fields[k]) == *it;
    if (!ok) {
        std::string want;
        for (auto n : names) want += (want.empty() ? "" : ",") + std::string(n);
        throw ParseError(at_line(r.source, r.number), "expected header '" + want + "'");
    }
}

std::vector<std::string_view> fields_of(const LineReader& r, std::size_t expected) {
    auto f = split_csv(r.text);
    if (f.size() != expected)
        throw ParseError(at_line(r.source, r.number),
                         "expected " + std::to_string(expected) + " fields, found " + std::to_string(f.size()));
    return f;
}

std::size_t parse_index(std::string_view text, const std::string& location) {
    const long long v = parse_integer(text, location);
    if (v < 0) throw ParseError(location, "index must be >= 0");
    return static_cast<std::size_t>(v);
}

std::uint32_t parse_count(std::string_view text, const std::string& location) {
    const long long v = parse_integer(text, location);
    if (v < 0 || v > 0xffffffffLL) throw ParseError(location, "count out of range");
    return static_cast<std::uint32_t>(v);
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string(), "cannot open file");
    return in;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& location) {
    text = trim(text);
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw ParseError(location, "not a number: '" + std::string(text) + "'");
    return v;
}

long long parse_integer(std::string_view text, const std::string& location) {
    text = trim(text);
    long long v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw ParseError(location, "not an integer: '" + std::string(text) + "'");
    return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(2 * len, '0');
    for (unsigned int i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xf];
    }
    return out;
}

// ---------------------------------------------------------------------------

void write_image_csv(std::ostream& out, const ConfocalImage& image) {
    const auto& g = image.geometry;
    out << "# origin_x_nm=" << format_double(g.origin.x) << '\n'
        << "# origin_y_nm=" << format_double(g.origin.y) << '\n'
        << "# pixel_pitch_nm=" << format_double(g.pixel_pitch_nm) << '\n'
        << "# width=" << g.width << '\n'
        << "# height=" << g.height << '\n'
        << "# dwell_ms=" << format_double(g.dwell_ms) << '\n'
        << "row,col,counts\n";
    for (std::size_t r = 0; r < g.height; ++r)
        for (std::size_t c = 0; c < g.width; ++c) out << r << ',' << c << ',' << image.at(r, c) << '\n';
}

ConfocalImage read_image_csv(std::istream& in, const std::string& source) {
    LineReader r{in, source};
    std::map<std::string, std::pair<std::string, std::size_t>> meta;
    bool have_header = false;
    while (r.next()) {
        const auto t = trim(r.text);
        if (t.front() == '#') {
            const auto body = trim(t.substr(1));
            const auto eq = body.find('=');
            if (eq != std::string_view::npos)
                meta[std::string(trim(body.substr(0, eq)))] = {std::string(trim(body.substr(eq + 1))), r.number};
            continue;
        }
        expect_header(r, {"row", "col", "counts"});
        have_header = true;
        break;
    }
    if (!have_header) throw ParseError(source, "missing 'row,col,counts' header");

    struct Entry {
        std::size_t row, col;
        std::uint32_t counts;
    };
    std::vector<Entry> entries;
    std::size_t max_row = 0, max_col = 0;
    while (r.next()) {
        if (trim(r.text).front() == '#') continue;
        const auto f = fields_of(r, 3);
        Entry e{parse_index(f[0], at_field(source, r.number, "row")), parse_index(f[1], at_field(source, r.number, "col")),
                parse_count(f[2], at_field(source, r.number, "counts"))};
        max_row = std::max(max_row, e.row);
        max_col = std::max(max_col, e.col);
        entries.push_back(e);
    }

    auto meta_double = [&](const std::string& key, double fallback) {
        const auto it = meta.find(key);
        return it == meta.end() ? fallback : parse_double(it->second.first, at_field(source, it->second.second, key));
    };
    auto meta_size = [&](const std::string& key, std::size_t fallback) {
        const auto it = meta.find(key);
        return it == meta.end() ? fallback : parse_index(it->second.first, at_field(source, it->second.second, key));
    };
    ConfocalImage image;
    auto& g = image.geometry;
    g.origin = {meta_double("origin_x_nm", 0.0), meta_double("origin_y_nm", 0.0)};
    g.pixel_pitch_nm = meta_double("pixel_pitch_nm", 100.0);
    g.dwell_ms = meta_double("dwell_ms", 1.0);
    g.width = meta_size("width", entries.empty() ? 0 : max_col + 1);
    g.height = meta_size("height", entries.empty() ? 0 : max_row + 1);
    try {
        g.validate();
    } catch (const DomainError& e) {
        throw ParseError(source, e.what());
    }
    image.counts.assign(g.pixels(), 0);
    for (const auto& e : entries) {
        if (e.row >= g.height || e.col >= g.width)
            throw ParseError(source, "pixel (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                                         ") outside the declared " + std::to_string(g.height) + "x" +
                                         std::to_string(g.width) + " grid");
        image.counts[e.row * g.width + e.col] = e.counts;
    }
    return image;
}

// ---------------------------------------------------------------------------

void write_cube(std::ostream& out, const SpectralCube& cube) {
    const auto& g = cube.geometry;
    nlohmann::ordered_json header{{"format", "fibsim-cube"},
                                  {"version", 1},
                                  {"origin_x_nm", g.origin.x},
                                  {"origin_y_nm", g.origin.y},
                                  {"pixel_pitch_nm", g.pixel_pitch_nm},
                                  {"width", g.width},
                                  {"height", g.height},
                                  {"dwell_ms", g.dwell_ms},
                                  {"start_nm", cube.axis.start_nm},
                                  {"step_nm", cube.axis.step_nm},
                                  {"bins", cube.axis.bins}};
    out << header.dump() << '\n' << "row,col,bin,counts\n";
    for (std::size_t r = 0; r < g.height; ++r) {
        for (std::size_t c = 0; c < g.width; ++c) {
            const std::size_t p = r * g.width + c;
            for (std::size_t b = 0; b < cube.axis.bins; ++b) {
                const auto n = cube.at(p, b);
                if (n) out << r << ',' << c << ',' << b << ',' << n << '\n';
            }
        }
    }
}

SpectralCube read_cube(std::istream& in, const std::string& source) {
    LineReader r{in, source};
    if (!r.next()) throw ParseError(source, "empty cube file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(at_line(source, r.number), std::string("invalid JSON header: ") + e.what());
    }
    SpectralCube cube;
    try {
        if (header.value("format", "") != "fibsim-cube") throw ParseError(at_line(source, 1), "not a fibsim cube");
        auto& g = cube.geometry;
        g.origin = {header.at("origin_x_nm").get<double>(), header.at("origin_y_nm").get<double>()};
        g.pixel_pitch_nm = header.at("pixel_pitch_nm").get<double>();
        g.width = header.at("width").get<std::size_t>();
        g.height = header.at("height").get<std::size_t>();
        g.dwell_ms = header.value("dwell_ms", 1.0);
        cube.axis.start_nm = header.at("start_nm").get<double>();
        cube.axis.step_nm = header.at("step_nm").get<double>();
        cube.axis.bins = header.at("bins").get<std::size_t>();
        g.validate();
        cube.axis.validate();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(at_line(source, 1), std::string("cube header: ") + e.what());
    } catch (const DomainError& e) {
        throw ParseError(at_line(source, 1), e.what());
    }
    if (!r.next()) throw ParseError(source, "missing 'row,col,bin,counts' header");
    expect_header(r, {"row", "col", "bin", "counts"});
    cube.counts.assign(cube.geometry.pixels() * cube.axis.bins, 0);
    while (r.next()) {
        const auto f = fields_of(r, 4);
        const auto row = parse_index(f[0], at_field(source, r.number, "row"));
        const auto col = parse_index(f[1], at_field(source, r.number, "col"));
        const auto bin = parse_index(f[2], at_field(source, r.number, "bin"));
        const auto n = parse_count(f[3], at_field(source, r.number, "counts"));
        if (row >= cube.geometry.height || col >= cube.geometry.width || bin >= cube.axis.bins)
            throw ParseError(at_line(source, r.number), "entry outside the declared cube extent");
        cube.counts[(row * cube.geometry.width + col) * cube.axis.bins + bin] = n;
    }
    return cube;
}

// ---------------------------------------------------------------------------

void write_g2_csv(std::ostream& out, const G2Histogram& hist) {
    out << "tau_ns,value,sigma\n";
    for (std::size_t k = 0; k < hist.tau_ns.size(); ++k)
        out << format_double(hist.tau_ns[k]) << ',' << format_double(hist.value[k]) << ','
            << format_double(hist.sigma[k]) << '\n';
}

G2Histogram read_g2_csv(std::istream& in, const std::string& source) {
    LineReader r{in, source};
    if (!r.next()) throw ParseError(source, "empty g2 file");
    expect_header(r, {"tau_ns", "value", "sigma"});
    G2Histogram h;
    while (r.next()) {
        const auto f = fields_of(r, 3);
        h.tau_ns.push_back(parse_double(f[0], at_field(source, r.number, "tau_ns")));
        h.value.push_back(parse_double(f[1], at_field(source, r.number, "value")));
        h.sigma.push_back(parse_double(f[2], at_field(source, r.number, "sigma")));
    }
    try {
        h.validate();
    } catch (const DomainError& e) {
        throw ParseError(source, e.what());
    }
    return h;
}

// ---------------------------------------------------------------------------

namespace {

std::string_view unit_column(SpectrumUnit u) {
    switch (u) {
        case SpectrumUnit::Gigahertz: return "frequency_ghz";
        case SpectrumUnit::Megahertz: return "detuning_mhz";
        case SpectrumUnit::Nanometer: return "wavelength_nm";
    }
    return "x";
}

}  // namespace

void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum) {
    if (spectrum.unit == SpectrumUnit::Megahertz)
        out << "# reference_ghz=" << format_double(spectrum.reference_ghz) << '\n';
    out << unit_column(spectrum.unit) << ",counts\n";
    for (std::size_t k = 0; k < spectrum.x.size(); ++k)
        out << format_double(spectrum.x[k]) << ',' << format_double(spectrum.counts[k]) << '\n';
}

Spectrum read_spectrum_csv(std::istream& in, const std::string& source) {
    LineReader r{in, source};
    Spectrum s;
    bool have_header = false;
    while (r.next()) {
        const auto t = trim(r.text);
        if (t.front() == '#') {
            const auto body = trim(t.substr(1));
            const auto eq = body.find('=');
            if (eq != std::string_view::npos && trim(body.substr(0, eq)) == "reference_ghz")
                s.reference_ghz = parse_double(body.substr(eq + 1), at_field(source, r.number, "reference_ghz"));
            continue;
        }
        const auto f = split_csv(t);
        if (f.size() != 2 || trim(f[1]) != "counts")
            throw ParseError(at_line(source, r.number), "expected header '<unit column>,counts'");
        const auto col = trim(f[0]);
        if (col == "frequency_ghz") {
            s.unit = SpectrumUnit::Gigahertz;
        } else if (col == "detuning_mhz") {
            s.unit = SpectrumUnit::Megahertz;
        } else if (col == "wavelength_nm") {
            s.unit = SpectrumUnit::Nanometer;
        } else {
            throw ParseError(at_field(source, r.number, col),
                             "unknown x column (expected frequency_ghz, detuning_mhz or wavelength_nm)");
        }
        have_header = true;
        break;
    }
    if (!have_header) throw ParseError(source, "missing spectrum header");
    const std::string xname(unit_column(s.unit));
    while (r.next()) {
        const auto f = fields_of(r, 2);
        s.x.push_back(parse_double(f[0], at_field(source, r.number, xname)));
        s.counts.push_back(parse_double(f[1], at_field(source, r.number, "counts")));
    }
    return s;
}

// ---------------------------------------------------------------------------

std::string read_text_file(const std::filesystem::path& path) {
    auto in = open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

ConfocalImage load_image(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_image_csv(in, path.string());
}

SpectralCube load_cube(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_cube(in, path.string());
}

G2Histogram load_g2(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_g2_csv(in, path.string());
}

Spectrum load_spectrum(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_spectrum_csv(in, path.string());
}

}  // namespace fibsim::formats
