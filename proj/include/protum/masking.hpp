#pragma once

// Continual-pretraining corpus construction: every sequence is duplicated and
// each copy gets an independent Bernoulli(p) mask draw. Every selected
// position becomes the mask token; there is no keep/random-replace branch.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace protum {

inline constexpr std::int64_t kIgnoreLabel = -100;
inline constexpr std::size_t kDefaultMaxSequenceLength = 256;
inline constexpr std::size_t kDefaultDuplicates = 10;

struct TokenSequence {
    std::string id;
    std::vector<std::int64_t> input_ids;
    std::vector<std::size_t> protected_positions;
    std::vector<std::size_t> answer_positions;

    void validate(std::size_t max_length = kDefaultMaxSequenceLength) const;
    /// Positions eligible for masking, ascending.
    std::vector<std::size_t> maskable_positions() const;
};

struct MaskedRecord {
    std::string id;
    std::size_t dup_index = 0;
    std::vector<std::int64_t> input_ids;
    std::vector<std::int64_t> mlm_labels;

    std::vector<std::size_t> masked_positions() const;
};

struct MaskingOptions {
    double probability = 0.15;
    std::size_t duplicates = kDefaultDuplicates;
    std::int64_t mask_token_id = 103;
    std::uint64_t seed = 0;
    std::size_t max_length = kDefaultMaxSequenceLength;
};

/// Seed used for one duplicate; depends only on (seed, id, dup_index).
std::uint64_t record_seed(std::uint64_t seed, const std::string& id, std::size_t dup_index);

std::vector<MaskedRecord> dynamic_mask(const TokenSequence& seq, const MaskingOptions& options);

struct MaskStats {
    double masked_fraction = 0.0;
    std::optional<double> per_duplicate_overlap;  // absent for a single record
    std::optional<double> answer_mask_rate;       // absent without answer positions
};

/// `source` supplies the maskable and answer positions the records came from.
MaskStats mask_stats(const TokenSequence& source, const std::vector<MaskedRecord>& records);

TokenSequence token_sequence_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TokenSequence& seq);
nlohmann::json to_json(const MaskedRecord& record);
MaskedRecord masked_record_from_json(const nlohmann::json& j);

}  // namespace protum
