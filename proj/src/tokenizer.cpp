#include <cctype>

#include "convotd/corpus.hpp"

namespace convotd {

namespace {

bool is_punct_char(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

bool is_word_char(char c) {
    auto u = static_cast<unsigned char>(c);
    return u >= 0x80 || std::isalnum(u) || c == '_';
}

bool has_url_scheme(std::string_view s) {
    auto starts = [&](std::string_view p) {
        if (s.size() < p.size()) return false;
        for (std::size_t i = 0; i < p.size(); ++i)
            if (std::tolower(static_cast<unsigned char>(s[i])) != p[i]) return false;
        return true;
    };
    return starts("http://") || starts("https://") || starts("www.");
}

// '#' or '@' that introduces a tag rather than standing alone as punctuation.
bool is_tag_prefix(std::string_view s, std::size_t i) {
    return (s[i] == '#' || s[i] == '@') && i + 1 < s.size() && is_word_char(s[i + 1]);
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
    std::vector<std::string_view> chunks;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) chunks.push_back(text.substr(start, i - start));
    }
    return chunks;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

bool is_punctuation(std::string_view token) {
    if (token.empty()) return false;
    for (char c : token)
        if (!is_punct_char(c)) return false;
    return true;
}

TokenList normalize_tokens(std::string_view text) {
    TokenList out;
    for (std::string_view chunk : split_whitespace(text)) {
        if (has_url_scheme(chunk)) {
            out.emplace_back("URL");
            continue;
        }
        std::size_t b = 0, e = chunk.size();
        while (b < e && is_punct_char(chunk[b]) && !is_tag_prefix(chunk, b)) {
            out.emplace_back(1, chunk[b]);
            ++b;
        }
        std::size_t core_end = e;
        while (core_end > b && is_punct_char(chunk[core_end - 1])) --core_end;
        std::string_view core = chunk.substr(b, core_end - b);
        if (!core.empty()) {
            if (has_url_scheme(core))
                out.emplace_back("URL");
            else if (core.front() == '#')
                out.emplace_back("HASH");
            else if (core.front() == '@')
                out.emplace_back("MENT");
            else
                out.push_back(lower(core));
        }
        for (std::size_t i = core_end; i < e; ++i) out.emplace_back(1, chunk[i]);
    }
    return out;
}

std::vector<std::string> extract_hashtags(std::string_view text) {
    std::vector<std::string> tags;
    for (std::string_view chunk : split_whitespace(text)) {
        if (has_url_scheme(chunk)) continue;
        std::size_t b = 0;
        while (b < chunk.size() && is_punct_char(chunk[b]) && !is_tag_prefix(chunk, b)) ++b;
        if (b >= chunk.size() || chunk[b] != '#') continue;
        std::size_t e = chunk.size();
        while (e > b + 1 && is_punct_char(chunk[e - 1])) --e;
        if (e > b + 1) tags.push_back(lower(chunk.substr(b, e - b)));
    }
    return tags;
}

}  // namespace convotd
