#include "protum/template_engine.hpp"

#include <algorithm>
#include <cctype>

#include "protum/error.hpp"

namespace protum {

namespace {

Segment literal(std::string text) { return {Segment::Type::literal, std::move(text)}; }
Segment prompt(std::string text) { return {Segment::Type::prompt, std::move(text)}; }
Segment field(std::string name) { return {Segment::Type::field, std::move(name)}; }
Segment answer() { return {Segment::Type::answer, {}}; }

std::string mask_run(std::size_t width) {
    std::string out;
    for (std::size_t i = 0; i < width; ++i) {
        if (i > 0) out += ' ';
        out += kMaskPlaceholder;
    }
    return out;
}

std::size_t count_words(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return words;
}

}  // namespace

std::size_t count_code_points(std::string_view text) noexcept {
    return static_cast<std::size_t>(std::count_if(text.begin(), text.end(), [](char c) {
        return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
    }));
}

std::vector<Segment> builtin_segments(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::cb:
            return {literal("[CLS]"), field("premise"), literal("[SEP]"), field("hypothesis"),
                    prompt("? The Answer :"), answer(), prompt("."), literal("[SEP]")};
        case TemplateKind::rte:
            return {literal("[CLS]"), field("premise"), prompt("Question :"), field("hypothesis"),
                    prompt("? The Answer :"), answer(), prompt("."), literal("[SEP]")};
        case TemplateKind::boolq:
            return {literal("[CLS]"), field("passage"), prompt("The Question :"), field("question"),
                    prompt("? The Answer :"), answer(), prompt("."), literal("[SEP]")};
        case TemplateKind::custom:
            break;
    }
    fail(ErrorKind::UnknownTemplate, "no built-in segments for custom templates");
}

std::vector<Segment> TaskSpec::segments() const {
    if (template_kind == TemplateKind::custom) return custom_segments;
    return builtin_segments(template_kind);
}

void TaskSpec::validate() const {
    if (class_count < 2) {
        fail(ErrorKind::InvalidTask, "task '" + name + "' needs at least 2 classes");
    }
    if (answer_strings.size() != class_count) {
        fail(ErrorKind::InvalidTask, "task '" + name + "' has " + std::to_string(answer_strings.size()) +
                                         " answer strings for " + std::to_string(class_count) + " classes");
    }
    const auto segs = segments();
    const auto slots = std::count_if(segs.begin(), segs.end(),
                                     [](const Segment& s) { return s.type == Segment::Type::answer; });
    if (slots != 1) {
        fail(ErrorKind::InvalidTask, "template must contain exactly one answer slot, found " +
                                         std::to_string(slots));
    }
}

TemplatedExample render(const RawExample& example, const TaskSpec& task, RenderMode mode,
                        std::size_t mask_width) {
    task.validate();
    if (example.label && (*example.label < 0 || *example.label >= static_cast<int>(task.class_count))) {
        fail(ErrorKind::InvalidLabel, "example '" + example.id + "' label " + std::to_string(*example.label) +
                                          " outside [0, " + std::to_string(task.class_count) + ")");
    }
    if (mode == RenderMode::pretrain_train && !example.label) {
        fail(ErrorKind::MissingLabel, "example '" + example.id + "' has no label for pretrain_train");
    }
    if (mode == RenderMode::tuning && mask_width == 0) {
        fail(ErrorKind::InvalidTask, "mask width must be at least 1");
    }

    TemplatedExample out;
    out.id = example.id;
    out.label = example.label;
    out.mode = mode;
    out.mask_width = mode == RenderMode::tuning ? mask_width : 0;

    std::size_t length = 0;  // code points in out.text
    bool answer_pending = false;
    auto append = [&](const std::string& piece) {
        if (piece.empty()) return;
        if (!out.text.empty()) {
            out.text += ' ';
            ++length;
        }
        if (answer_pending) {
            out.answer_span = {length, length};
            answer_pending = false;
        }
        out.text += piece;
        length += count_code_points(piece);
    };

    for (const Segment& seg : task.segments()) {
        switch (seg.type) {
            case Segment::Type::literal:
            case Segment::Type::prompt:
                append(seg.text);
                break;
            case Segment::Type::field: {
                auto it = example.fields.find(seg.text);
                if (it == example.fields.end()) {
                    fail(ErrorKind::MissingField, "example '" + example.id + "' lacks field '" + seg.text + "'");
                }
                append(it->second);
                break;
            }
            case Segment::Type::answer: {
                std::string region;
                if (mode == RenderMode::pretrain_train) {
                    region = task.answer_strings[static_cast<std::size_t>(*example.label)];
                } else if (mode == RenderMode::tuning) {
                    region = mask_run(mask_width);
                }
                if (region.empty()) {
                    answer_pending = true;
                    out.answer_span = {length, length};
                } else {
                    append(region);
                    out.answer_span = {length - count_code_points(region), length};
                }
                break;
            }
        }
    }
    return out;
}

std::size_t task_mask_width(const TaskSpec& task,
                            const std::map<std::string, std::size_t>& tokenizer_report) {
    std::size_t width = 0;
    for (const auto& answer_string : task.answer_strings) {
        auto it = tokenizer_report.find(answer_string);
        if (it == tokenizer_report.end()) {
            fail(ErrorKind::MissingAnswerTokenCount, "no token count for answer '" + answer_string + "'");
        }
        if (it->second == 0) {
            fail(ErrorKind::InvalidTask, "answer '" + answer_string + "' reported as zero tokens");
        }
        width = std::max(width, it->second);
    }
    if (width == 0) fail(ErrorKind::InvalidTask, "task has no answer strings");
    return width;
}

RenderedDataset render_dataset(const std::vector<RawExample>& examples, const TaskSpec& task,
                               RenderMode mode, std::size_t mask_width) {
    RenderedDataset out;
    out.examples.reserve(examples.size());
    double chars = 0.0;
    double words = 0.0;
    for (const auto& ex : examples) {
        try {
            out.examples.push_back(render(ex, task, mode, mask_width));
        } catch (const Error& e) {
            throw Error(e.kind(), std::string("example '") + ex.id + "': " + e.what());
        }
        chars += static_cast<double>(count_code_points(out.examples.back().text));
        words += static_cast<double>(count_words(out.examples.back().text));
    }
    out.stats.count = out.examples.size();
    if (out.stats.count > 0) {
        out.stats.mean_length_chars = chars / static_cast<double>(out.stats.count);
        out.stats.mean_length_words = words / static_cast<double>(out.stats.count);
    }
    return out;
}

TemplateKind parse_template_kind(const std::string& name) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "cb") return TemplateKind::cb;
    if (lower == "rte") return TemplateKind::rte;
    if (lower == "boolq") return TemplateKind::boolq;
    if (lower == "custom") return TemplateKind::custom;
    fail(ErrorKind::UnknownTemplate, "unknown template kind '" + name + "'");
}

std::string to_string(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::cb: return "CB";
        case TemplateKind::rte: return "RTE";
        case TemplateKind::boolq: return "BoolQ";
        case TemplateKind::custom: return "custom";
    }
    return "custom";
}

RenderMode parse_render_mode(const std::string& name) {
    if (name == "pretrain_train") return RenderMode::pretrain_train;
    if (name == "pretrain_val") return RenderMode::pretrain_val;
    if (name == "tuning") return RenderMode::tuning;
    fail(ErrorKind::InvalidTask, "unknown rendering mode '" + name + "'");
}

std::string to_string(RenderMode mode) {
    switch (mode) {
        case RenderMode::pretrain_train: return "pretrain_train";
        case RenderMode::pretrain_val: return "pretrain_val";
        case RenderMode::tuning: return "tuning";
    }
    return "tuning";
}

namespace {

Segment::Type parse_segment_type(const std::string& name) {
    if (name == "literal") return Segment::Type::literal;
    if (name == "prompt") return Segment::Type::prompt;
    if (name == "field") return Segment::Type::field;
    if (name == "answer") return Segment::Type::answer;
    fail(ErrorKind::UnknownTemplate, "unknown segment type '" + name + "'");
}

const char* segment_type_name(Segment::Type type) {
    switch (type) {
        case Segment::Type::literal: return "literal";
        case Segment::Type::prompt: return "prompt";
        case Segment::Type::field: return "field";
        case Segment::Type::answer: return "answer";
    }
    return "literal";
}

template <typename F>
auto parsing(const char* what, F&& f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string(what) + ": " + e.what());
    }
}

}  // namespace

TaskSpec task_from_json(const nlohmann::json& j) {
    return parsing("task file", [&] {
        TaskSpec task;
        task.name = j.at("name").get<std::string>();
        task.answer_strings = j.at("answer_strings").get<std::vector<std::string>>();
        task.class_count = j.value("class_count", task.answer_strings.size());
        task.template_kind = parse_template_kind(j.at("template_kind").get<std::string>());
        if (j.contains("custom_segments")) {
            for (const auto& s : j.at("custom_segments")) {
                Segment seg;
                seg.type = parse_segment_type(s.at("type").get<std::string>());
                if (seg.type == Segment::Type::field) {
                    seg.text = s.at("name").get<std::string>();
                } else if (seg.type != Segment::Type::answer) {
                    seg.text = s.at("text").get<std::string>();
                }
                task.custom_segments.push_back(std::move(seg));
            }
        }
        task.validate();
        return task;
    });
}

nlohmann::json to_json(const TaskSpec& task) {
    nlohmann::json j{{"name", task.name},
                     {"class_count", task.class_count},
                     {"answer_strings", task.answer_strings},
                     {"template_kind", to_string(task.template_kind)}};
    if (task.template_kind == TemplateKind::custom) {
        auto segs = nlohmann::json::array();
        for (const auto& s : task.custom_segments) {
            nlohmann::json js{{"type", segment_type_name(s.type)}};
            if (s.type == Segment::Type::field) js["name"] = s.text;
            else if (s.type != Segment::Type::answer) js["text"] = s.text;
            segs.push_back(std::move(js));
        }
        j["custom_segments"] = std::move(segs);
    }
    return j;
}

RawExample raw_example_from_json(const nlohmann::json& j) {
    return parsing("raw example", [&] {
        RawExample ex;
        const auto& id = j.at("id");
        ex.id = id.is_string() ? id.get<std::string>() : id.dump();
        for (const auto& [key, value] : j.at("fields").items()) {
            ex.fields.emplace(key, value.get<std::string>());
        }
        if (j.contains("label") && !j.at("label").is_null()) ex.label = j.at("label").get<int>();
        return ex;
    });
}

nlohmann::json to_json(const TemplatedExample& example) {
    nlohmann::json j;
    j["id"] = example.id;
    j["text"] = example.text;
    j["answer_span"] = {example.answer_span.begin, example.answer_span.end};
    j["mask_width"] = example.mask_width;
    j["label"] = example.label ? nlohmann::json(*example.label) : nlohmann::json(nullptr);
    j["mode"] = to_string(example.mode);
    return j;
}

TemplatedExample templated_example_from_json(const nlohmann::json& j) {
    return parsing("templated example", [&] {
        TemplatedExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.text = j.at("text").get<std::string>();
        const auto& span = j.at("answer_span");
        ex.answer_span = {span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()};
        ex.mask_width = j.at("mask_width").get<std::size_t>();
        if (!j.at("label").is_null()) ex.label = j.at("label").get<int>();
        ex.mode = parse_render_mode(j.at("mode").get<std::string>());
        return ex;
    });
}

}  // namespace protum
