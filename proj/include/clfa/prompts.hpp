#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clfa/error.hpp"
#include "clfa/trajectory.hpp"
#include "clfa/util.hpp"

namespace clfa {

enum class HandwritingState { Normal, Abnormal };

inline HandwritingState state_from_string(std::string_view s) {
    if (s == "normal") return HandwritingState::Normal;
    if (s == "abnormal") return HandwritingState::Abnormal;
    raise(ErrorCode::UnknownState, "unknown handwriting state '" + std::string(s) + "'");
}

/// Two-tier prompt bank: 7+7 state-level quality patterns with an [o] slot,
/// and 17 templates with a [c] slot. Alternation groups like "a/the" expand
/// into one sentence per alternative.
struct PromptBank {
    std::vector<std::string> normal_patterns;
    std::vector<std::string> abnormal_patterns;
    std::vector<std::string> templates;

    static PromptBank standard() {
        PromptBank b;
        b.normal_patterns = {
            "[o]",
            "clear [o]",
            "well-written [o]",
            "legible [o]",
            "neatly drawn [o]",
            "[o] with normal",
            "healthy [o]",
        };
        b.abnormal_patterns = {
            "distorted [o]",
            "unclear [o]",
            "trembled [o]",
            "impaired [o]",
            "[o] with shaky lines",
            "[o] with abnormal",
            "poorly written [o]",
        };
        b.templates = {
            "a bad photo of a/the [c].",
            "a good photo of a/the [c].",
            "a black and white photo of a/the [c].",
            "a low resolution photo of a/the [c].",
            "a photo of one [c].",
            "a dark photo of a/the [c].",
            "a cropped photo of a/the [c].",
            "a photo of a large [c].",
            "a photo of a cool [c].",
            "a bright photo of a/the [c].",
            "a photo of the small [c].",
            "a close-up photo of the [c].",
            "a blurry photo of a/the [c].",
            "a jpeg corrupted photo of a/the [c].",
            "a photo of a/the [c].",
            "there is a/the [c] in the scene.",
            "this is a/the/one [c] in the scene.",
        };
        b.validate();
        return b;
    }

    void validate() const {
        if (normal_patterns.size() != 7 || abnormal_patterns.size() != 7)
            raise(ErrorCode::InvalidArgument, "state pattern counts must be 7/7");
        if (templates.size() != 17) raise(ErrorCode::InvalidArgument, "template count must be 17");
        auto check_slot = [](const std::string& s, const std::string& slot) {
            auto first = s.find(slot);
            if (first == std::string::npos || s.find(slot, first + 1) != std::string::npos)
                raise(ErrorCode::InvalidArgument, "pattern must contain exactly one " + slot + " slot: '" + s + "'");
        };
        for (const auto& p : normal_patterns) check_slot(p, "[o]");
        for (const auto& p : abnormal_patterns) check_slot(p, "[o]");
        for (const auto& t : templates) check_slot(t, "[c]");
    }
};

namespace prompt_detail {

inline std::string replace_slot(const std::string& pattern, const std::string& slot, const std::string& value) {
    std::string out = pattern;
    auto pos = out.find(slot);
    out.replace(pos, slot.size(), value);
    return out;
}

/// Expands whitespace-delimited alternation groups ("a/the", "a/the/one")
/// into one string per combination, preserving written order.
inline std::vector<std::string> expand_alternations(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            words.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    words.push_back(cur);

    std::vector<std::string> results = {""};
    for (std::size_t w = 0; w < words.size(); ++w) {
        std::vector<std::string> options;
        if (words[w].find('/') != std::string::npos) {
            std::string opt;
            for (char c : words[w]) {
                if (c == '/') {
                    options.push_back(opt);
                    opt.clear();
                } else {
                    opt.push_back(c);
                }
            }
            options.push_back(opt);
        } else {
            options.push_back(words[w]);
        }
        std::vector<std::string> next;
        next.reserve(results.size() * options.size());
        for (const auto& prefix : results)
            for (const auto& o : options) next.push_back(w == 0 ? o : prefix + " " + o);
        results = std::move(next);
    }
    return results;
}

}  // namespace prompt_detail

/// Instantiates the 7 state patterns for a task name, in table order.
inline std::vector<std::string> build_phrases(const PromptBank& bank, const std::string& task_name,
                                              HandwritingState state) {
    if (task_name.empty()) raise(ErrorCode::InvalidArgument, "task name must be non-empty");
    const auto& patterns = state == HandwritingState::Normal ? bank.normal_patterns : bank.abnormal_patterns;
    std::vector<std::string> out;
    out.reserve(patterns.size());
    for (const auto& p : patterns) out.push_back(prompt_detail::replace_slot(p, "[o]", task_name));
    return out;
}

/// Instantiates every template (with alternation expansion) for one phrase.
/// The sentence count is the same for every phrase.
inline std::vector<std::string> expand_templates(const PromptBank& bank, const std::string& phrase) {
    if (phrase.empty()) raise(ErrorCode::InvalidArgument, "phrase must be non-empty");
    std::vector<std::string> out;
    for (const auto& tpl : bank.templates)
        for (const auto& variant : prompt_detail::expand_alternations(tpl))
            out.push_back(prompt_detail::replace_slot(variant, "[c]", phrase));
    return out;
}

/// All prompt sentences for (task, state): each phrase crossed with each
/// template variant.
inline std::vector<std::string> ensemble_sentences(const PromptBank& bank, const std::string& task_name,
                                                   HandwritingState state) {
    std::vector<std::string> out;
    for (const auto& phrase : build_phrases(bank, task_name, state))
        for (auto& s : expand_templates(bank, phrase)) out.push_back(std::move(s));
    return out;
}

// ---------------------------------------------------------------------------
// Text encoder interface + deterministic stub
// ---------------------------------------------------------------------------

/// Pluggable sentence embedder. Implementations must be deterministic per
/// sentence.
class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int width() const = 0;
    virtual std::vector<double> embed(const std::string& sentence) const = 0;
};

/// Stand-in for a pretrained text tower: each word hashes to a fixed random
/// unit-scale vector keyed by (seed, word bytes); a sentence embeds as the
/// l2-normalized sum of its word vectors. Sentences sharing words therefore
/// correlate — the property prompt ensembling and cross-task matching rely
/// on — while word-disjoint sentences are near-orthogonal at width 768.
class StubEncoder : public TextEncoder {
public:
    StubEncoder(std::uint64_t seed, int width) : seed_(seed), width_(width) {
        if (width < 8) raise(ErrorCode::InvalidArgument, "stub encoder width must be >= 8");
    }

    int width() const override { return width_; }

    std::vector<double> embed(const std::string& sentence) const override {
        std::vector<double> acc(static_cast<std::size_t>(width_), 0.0);
        std::string word;
        auto flush = [&] {
            if (word.empty()) return;
            std::uint64_t key = mix64(seed_, fnv1a64(word));
            std::uint64_t state = key;
            for (int i = 0; i < width_; ++i) acc[static_cast<std::size_t>(i)] += 2.0 * (static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53) - 1.0;
            word.clear();
        };
        for (char c : sentence) {
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\'') {
                word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else {
                flush();
            }
        }
        flush();

        double norm = 0.0;
        for (double v : acc) norm += v * v;
        norm = std::sqrt(norm);
        if (norm == 0.0) {  // sentence with no words: fall back to whole-string hash
            std::uint64_t state = mix64(seed_, fnv1a64(sentence) ^ 0x5151ull);
            for (auto& v : acc) v = 2.0 * (static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53) - 1.0;
            norm = 0.0;
            for (double v : acc) norm += v * v;
            norm = std::sqrt(norm);
        }
        for (auto& v : acc) v /= norm;
        return acc;
    }

private:
    std::uint64_t seed_;
    int width_;
};

inline std::unique_ptr<TextEncoder> stub_encoder(std::uint64_t seed, int width) {
    return std::make_unique<StubEncoder>(seed, width);
}

// ---------------------------------------------------------------------------
// Prototypes
// ---------------------------------------------------------------------------

/// Per-task pair of unit-norm text prototypes (normal, abnormal).
struct TextPrototypes {
    int task_id = 0;
    int width = 0;
    std::vector<double> e_nor;
    std::vector<double> e_abn;
};

/// Embeds every ensemble sentence for each state, averages the raw
/// embeddings, then l2-normalizes the mean once.
inline TextPrototypes embed_prototypes(const TextEncoder& encoder, const TaskMeta& task, const PromptBank& bank) {
    const int width = encoder.width();
    auto build = [&](HandwritingState state) {
        std::vector<double> mean(static_cast<std::size_t>(width), 0.0);
        auto sentences = ensemble_sentences(bank, task.name, state);
        for (const auto& s : sentences) {
            std::vector<double> v = encoder.embed(s);
            if (static_cast<int>(v.size()) != width)
                raise(ErrorCode::EncoderWidthMismatch, "encoder returned width " + std::to_string(v.size()) +
                                                           ", declared " + std::to_string(width));
            for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i];
        }
        double inv = 1.0 / static_cast<double>(sentences.size());
        double norm = 0.0;
        for (auto& v : mean) {
            v *= inv;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (auto& v : mean) v /= norm;
        return mean;
    };
    TextPrototypes p;
    p.task_id = task.task_id;
    p.width = width;
    p.e_nor = build(HandwritingState::Normal);
    p.e_abn = build(HandwritingState::Abnormal);
    return p;
}

inline std::vector<TextPrototypes> embed_all_prototypes(const TextEncoder& encoder, const PromptBank& bank) {
    std::vector<TextPrototypes> out;
    out.reserve(task_table().size());
    for (const auto& task : task_table()) out.push_back(embed_prototypes(encoder, task, bank));
    return out;
}

// ---------------------------------------------------------------------------
// Prototype file format: JSON manifest + flat little-endian float32 blob.
// Offsets are byte positions into the blob.
// ---------------------------------------------------------------------------

inline void save_prototypes(const std::vector<TextPrototypes>& protos, const std::filesystem::path& json_path,
                            const std::filesystem::path& bin_path) {
    if (protos.empty()) raise(ErrorCode::InvalidArgument, "no prototypes to save");
    const int width = protos[0].width;
    std::string blob;
    nlohmann::json j;
    j["T"] = width;
    j["blob"] = bin_path.filename().string();
    j["entries"] = nlohmann::json::array();
    for (const auto& p : protos) {
        if (p.width != width) raise(ErrorCode::InvalidArgument, "prototype widths differ");
        std::size_t nor_off = blob.size();
        for (double v : p.e_nor) append_f32_le(blob, static_cast<float>(v));
        std::size_t abn_off = blob.size();
        for (double v : p.e_abn) append_f32_le(blob, static_cast<float>(v));
        j["entries"].push_back(
            {{"task_id", p.task_id}, {"offsets", {{"nor", nor_off}, {"abn", abn_off}}}});
    }
    std::ofstream jf(json_path);
    if (!jf) raise(ErrorCode::IoError, "cannot write " + json_path.string());
    jf << j.dump(2) << "\n";
    std::ofstream bf(bin_path, std::ios::binary);
    if (!bf) raise(ErrorCode::IoError, "cannot write " + bin_path.string());
    bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline std::map<int, TextPrototypes> load_prototypes(const std::filesystem::path& json_path) {
    std::ifstream jf(json_path);
    if (!jf) raise(ErrorCode::MissingFile, "cannot open " + json_path.string());
    nlohmann::json j;
    try {
        jf >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoError, "prototype manifest parse failure: " + std::string(e.what()));
    }
    const int width = j.at("T").get<int>();
    std::filesystem::path bin_path = json_path.parent_path() / j.at("blob").get<std::string>();
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) raise(ErrorCode::MissingFile, "cannot open " + bin_path.string());
    std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    auto read_vec = [&](std::size_t offset) {
        if (offset + 4ull * width > blob.size()) raise(ErrorCode::TruncatedBlob, "prototype blob too short");
        std::vector<double> v(static_cast<std::size_t>(width));
        for (int i = 0; i < width; ++i)
            v[static_cast<std::size_t>(i)] =
                read_f32_le(reinterpret_cast<const unsigned char*>(blob.data()) + offset + 4ull * i);
        return v;
    };

    std::map<int, TextPrototypes> out;
    for (const auto& e : j.at("entries")) {
        TextPrototypes p;
        p.task_id = e.at("task_id").get<int>();
        p.width = width;
        p.e_nor = read_vec(e.at("offsets").at("nor").get<std::size_t>());
        p.e_abn = read_vec(e.at("offsets").at("abn").get<std::size_t>());
        out[p.task_id] = std::move(p);
    }
    return out;
}

}  // namespace clfa
