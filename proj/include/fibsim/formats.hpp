#pragma once

#include "fibsim/imaging.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace fibsim::formats {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
/// Whole-field number parse; ParseError names `location` on failure.
double parse_double(std::string_view text, const std::string& location);
long long parse_integer(std::string_view text, const std::string& location);
std::vector<std::string_view> split_csv(std::string_view line);
/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);

// Image: "# key=value" geometry comments, then `row,col,counts` for every pixel.
void write_image_csv(std::ostream& out, const ConfocalImage& image);
ConfocalImage read_image_csv(std::istream& in, const std::string& source = "<image>");

// Cube: one JSON header line, then `row,col,bin,counts` for non-zero entries.
void write_cube(std::ostream& out, const SpectralCube& cube);
SpectralCube read_cube(std::istream& in, const std::string& source = "<cube>");

// g2: `tau_ns,value,sigma`.
void write_g2_csv(std::ostream& out, const G2Histogram& hist);
G2Histogram read_g2_csv(std::istream& in, const std::string& source = "<g2>");

// Spectrum: first column named by unit (frequency_ghz | detuning_mhz | wavelength_nm), then counts.
void write_spectrum_csv(std::ostream& out, const Spectrum& spectrum);
Spectrum read_spectrum_csv(std::istream& in, const std::string& source = "<spectrum>");

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

ConfocalImage load_image(const std::filesystem::path& path);
SpectralCube load_cube(const std::filesystem::path& path);
G2Histogram load_g2(const std::filesystem::path& path);
Spectrum load_spectrum(const std::filesystem::path& path);

}  // namespace fibsim::formats
