#include "fibsim/random.hpp"

namespace fibsim {

RandomSeed RandomSeed::child(std::uint64_t index) const {
    RandomSeed out = *this;
    out.path_.push_back(index);
    return out;
}

Engine RandomSeed::engine() const {
    // Depth is folded in so that path {0} and path {0, 0} differ.
    std::vector<std::uint32_t> words;
    words.reserve(3 + 2 * path_.size());
    words.push_back(static_cast<std::uint32_t>(root_));
    words.push_back(static_cast<std::uint32_t>(root_ >> 32));
    words.push_back(static_cast<std::uint32_t>(path_.size()));
    for (auto index : path_) {
        words.push_back(static_cast<std::uint32_t>(index));
        words.push_back(static_cast<std::uint32_t>(index >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Engine(seq);
}

}  // namespace fibsim
