#include "protum/masking.hpp"

#include <algorithm>

#include "protum/error.hpp"
#include "protum/random.hpp"

namespace protum {

void TokenSequence::validate(std::size_t max_length) const {
    const std::size_t length = input_ids.size();
    if (length > max_length) {
        fail(ErrorKind::InvalidSequence, "sequence '" + id + "' has length " + std::to_string(length) +
                                             " > max " + std::to_string(max_length));
    }
    auto check_bounds = [&](const std::vector<std::size_t>& positions, const char* what) {
        for (std::size_t p : positions) {
            if (p >= length) {
                fail(ErrorKind::InvalidSequence, "sequence '" + id + "' " + what + " position " +
                                                     std::to_string(p) + " out of range");
            }
        }
    };
    check_bounds(protected_positions, "protected");
    check_bounds(answer_positions, "answer");
    for (std::size_t p : answer_positions) {
        if (std::find(protected_positions.begin(), protected_positions.end(), p) != protected_positions.end()) {
            fail(ErrorKind::InvalidSequence,
                 "sequence '" + id + "' position " + std::to_string(p) + " is both protected and answer");
        }
    }
}

std::vector<std::size_t> TokenSequence::maskable_positions() const {
    std::vector<bool> blocked(input_ids.size(), false);
    for (std::size_t p : protected_positions) {
        if (p < blocked.size()) blocked[p] = true;
    }
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < blocked.size(); ++p) {
        if (!blocked[p]) out.push_back(p);
    }
    return out;
}

std::vector<std::size_t> MaskedRecord::masked_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < mlm_labels.size(); ++p) {
        if (mlm_labels[p] != kIgnoreLabel) out.push_back(p);
    }
    return out;
}

std::uint64_t record_seed(std::uint64_t seed, const std::string& id, std::size_t dup_index) {
    return derive_seed(seed, "mask:" + id, dup_index);
}

std::vector<MaskedRecord> dynamic_mask(const TokenSequence& seq, const MaskingOptions& options) {
    if (!(options.probability > 0.0 && options.probability < 1.0)) {
        fail(ErrorKind::InvalidProbability, "mask probability must lie in (0, 1), got " +
                                                std::to_string(options.probability));
    }
    if (options.duplicates == 0) {
        fail(ErrorKind::InvalidSequence, "duplicates must be at least 1");
    }
    seq.validate(options.max_length);
    const auto maskable = seq.maskable_positions();
    if (maskable.empty()) {
        fail(ErrorKind::NoMaskablePositions, "sequence '" + seq.id + "' has no maskable positions");
    }

    std::vector<MaskedRecord> records;
    records.reserve(options.duplicates);
    for (std::size_t dup = 0; dup < options.duplicates; ++dup) {
        Rng rng(record_seed(options.seed, seq.id, dup));
        MaskedRecord rec;
        rec.id = seq.id;
        rec.dup_index = dup;
        rec.input_ids = seq.input_ids;
        rec.mlm_labels.assign(seq.input_ids.size(), kIgnoreLabel);
        for (std::size_t p : maskable) {
            if (rng.uniform() < options.probability) {
                rec.mlm_labels[p] = seq.input_ids[p];
                rec.input_ids[p] = options.mask_token_id;
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

MaskStats mask_stats(const TokenSequence& source, const std::vector<MaskedRecord>& records) {
    if (records.empty()) fail(ErrorKind::HeterogeneousRecords, "no records");
    for (const auto& r : records) {
        if (r.id != source.id) {
            fail(ErrorKind::HeterogeneousRecords, "record id '" + r.id + "' differs from '" + source.id + "'");
        }
        if (r.mlm_labels.size() != source.input_ids.size() || r.input_ids.size() != source.input_ids.size()) {
            fail(ErrorKind::HeterogeneousRecords, "record length differs from source '" + source.id + "'");
        }
    }

    const std::size_t length = source.input_ids.size();
    const auto maskable = source.maskable_positions();
    std::vector<std::vector<bool>> sets;
    sets.reserve(records.size());
    std::size_t masked_total = 0;
    for (const auto& r : records) {
        std::vector<bool> set(length, false);
        for (std::size_t p : r.masked_positions()) {
            set[p] = true;
            ++masked_total;
        }
        sets.push_back(std::move(set));
    }

    MaskStats stats;
    const double maskable_total = static_cast<double>(maskable.size() * records.size());
    stats.masked_fraction = maskable_total > 0 ? static_cast<double>(masked_total) / maskable_total : 0.0;

    if (records.size() > 1) {
        double sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < sets.size(); ++a) {
            for (std::size_t b = a + 1; b < sets.size(); ++b) {
                std::size_t inter = 0;
                std::size_t uni = 0;
                for (std::size_t p = 0; p < length; ++p) {
                    inter += sets[a][p] && sets[b][p];
                    uni += sets[a][p] || sets[b][p];
                }
                // two empty masks are identical
                sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
                ++pairs;
            }
        }
        stats.per_duplicate_overlap = sum / static_cast<double>(pairs);
    }

    if (!source.answer_positions.empty()) {
        std::size_t hit = 0;
        for (const auto& set : sets) {
            for (std::size_t p : source.answer_positions) hit += set[p];
        }
        stats.answer_mask_rate =
            static_cast<double>(hit) / static_cast<double>(source.answer_positions.size() * sets.size());
    }
    return stats;
}

TokenSequence token_sequence_from_json(const nlohmann::json& j) {
    try {
        TokenSequence seq;
        const auto& id = j.at("id");
        seq.id = id.is_string() ? id.get<std::string>() : id.dump();
        seq.input_ids = j.at("input_ids").get<std::vector<std::int64_t>>();
        seq.protected_positions = j.value("protected", std::vector<std::size_t>{});
        seq.answer_positions = j.value("answer_positions", std::vector<std::size_t>{});
        return seq;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("token sequence: ") + e.what());
    }
}

nlohmann::json to_json(const TokenSequence& seq) {
    return {{"id", seq.id},
            {"input_ids", seq.input_ids},
            {"protected", seq.protected_positions},
            {"answer_positions", seq.answer_positions}};
}

nlohmann::json to_json(const MaskedRecord& record) {
    return {{"id", record.id}, {"dup", record.dup_index}, {"input_ids", record.input_ids},
            {"mlm_labels", record.mlm_labels}};
}

MaskedRecord masked_record_from_json(const nlohmann::json& j) {
    try {
        MaskedRecord r;
        r.id = j.at("id").get<std::string>();
        r.dup_index = j.at("dup").get<std::size_t>();
        r.input_ids = j.at("input_ids").get<std::vector<std::int64_t>>();
        r.mlm_labels = j.at("mlm_labels").get<std::vector<std::int64_t>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("masked record: ") + e.what());
    }
}

}  // namespace protum
