#pragma once

// Renders raw task examples into unified cloze prompts. Special tokens are
// emitted as literal placeholder strings ("[CLS]", "[SEP]", "[MASK]"); mapping
// them to tokenizer ids is the exporter's job.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace protum {

inline constexpr const char* kMaskPlaceholder = "[MASK]";

enum class TemplateKind { cb, rte, boolq, custom };

enum class RenderMode { pretrain_train, pretrain_val, tuning };

struct Segment {
    enum class Type { literal, prompt, field, answer };
    Type type = Type::literal;
    std::string text;  // literal/prompt text, or the field name for Type::field
};

struct TaskSpec {
    std::string name;
    std::size_t class_count = 0;
    std::vector<std::string> answer_strings;
    TemplateKind template_kind = TemplateKind::custom;
    std::vector<Segment> custom_segments;

    /// Segment list actually rendered: the built-in table for cb/rte/boolq,
    /// custom_segments otherwise.
    std::vector<Segment> segments() const;
    void validate() const;
};

struct RawExample {
    std::string id;
    std::map<std::string, std::string> fields;
    std::optional<int> label;
};

/// Half-open range in code points of the rendered text.
struct CharSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    bool empty() const noexcept { return begin == end; }
    bool operator==(const CharSpan&) const = default;
};

struct TemplatedExample {
    std::string id;
    std::string text;
    CharSpan answer_span;
    std::size_t mask_width = 0;  // 0 outside tuning mode
    std::optional<int> label;
    RenderMode mode = RenderMode::tuning;
};

struct RenderStats {
    std::size_t count = 0;
    double mean_length_chars = 0.0;
    double mean_length_words = 0.0;
};

struct RenderedDataset {
    std::vector<TemplatedExample> examples;
    RenderStats stats;
};

std::vector<Segment> builtin_segments(TemplateKind kind);

/// `mask_width` is only consulted in tuning mode.
TemplatedExample render(const RawExample& example, const TaskSpec& task, RenderMode mode,
                        std::size_t mask_width = 1);

/// Max token count over the task's answer strings.
std::size_t task_mask_width(const TaskSpec& task,
                            const std::map<std::string, std::size_t>& tokenizer_report);

RenderedDataset render_dataset(const std::vector<RawExample>& examples, const TaskSpec& task,
                               RenderMode mode, std::size_t mask_width = 1);

std::size_t count_code_points(std::string_view text) noexcept;

// JSON bindings for the task file, raw dataset lines and rendered output lines.
TemplateKind parse_template_kind(const std::string& name);
std::string to_string(TemplateKind kind);
RenderMode parse_render_mode(const std::string& name);
std::string to_string(RenderMode mode);

TaskSpec task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskSpec& task);
RawExample raw_example_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TemplatedExample& example);
TemplatedExample templated_example_from_json(const nlohmann::json& j);

}  // namespace protum
