#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fibsim {

using Engine = std::mt19937_64;

/// Root seed plus a path of child indices. Identical (root, path) pairs give
/// identical engines, so work split across tasks stays reproducible no matter
/// how it is scheduled.
class RandomSeed {
public:
    explicit RandomSeed(std::uint64_t root = 0) : root_(root) {}

    RandomSeed child(std::uint64_t index) const;
    Engine engine() const;

    std::uint64_t root() const { return root_; }
    const std::vector<std::uint64_t>& path() const { return path_; }

    friend bool operator==(const RandomSeed&, const RandomSeed&) = default;

private:
    std::uint64_t root_;
    std::vector<std::uint64_t> path_;
};

}  // namespace fibsim
