#include "pdrop/layout.hpp"

#include <algorithm>
#include <string>

#include "pdrop/errors.hpp"

namespace pdrop::layout {

std::string_view to_string(TokenRole role) noexcept {
    switch (role) {
        case TokenRole::Image:
            return "image";
        case TokenRole::Instruction:
            return "instruction";
        case TokenRole::Answer:
            return "answer";
    }
    return "unknown";
}

MultimodalSequence::MultimodalSequence(num::Matrix image_embeddings, std::vector<Token> tokens)
    : m_images(std::move(image_embeddings)), m_tokens(std::move(tokens)) {
    bool seen_text = false;
    for (std::size_t i = 0; i < m_tokens.size(); ++i) {
        const Token& t = m_tokens[i];
        if (i > 0 && t.position <= m_tokens[i - 1].position) {
            throw InputError("token positions must be strictly increasing");
        }
        if (t.role == TokenRole::Image) {
            if (seen_text) {
                throw InputError("image tokens must precede all text tokens");
            }
            if (t.image_row >= m_images.rows()) {
                throw InputError("image token references missing embedding row " + std::to_string(t.image_row));
            }
        } else {
            seen_text = true;
            if (t.token_id < 0) {
                throw InputError("text token at position " + std::to_string(t.position) + " has no id");
            }
        }
    }
}

std::size_t MultimodalSequence::image_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(m_tokens.begin(), m_tokens.end(),
                                                   [](const Token& t) { return t.role == TokenRole::Image; }));
}

bool MultimodalSequence::has_instruction() const noexcept {
    return std::any_of(m_tokens.begin(), m_tokens.end(),
                       [](const Token& t) { return t.role == TokenRole::Instruction; });
}

MultimodalSequence MultimodalSequence::retain_images(std::span<const std::size_t> kept_positions) const {
    std::vector<Token> tokens;
    std::vector<std::size_t> rows;
    for (const Token& t : m_tokens) {
        if (t.role != TokenRole::Image) {
            tokens.push_back(t);
            continue;
        }
        if (std::find(kept_positions.begin(), kept_positions.end(), t.position) != kept_positions.end()) {
            Token kept = t;
            kept.image_row = rows.size();
            rows.push_back(t.image_row);
            tokens.push_back(kept);
        }
    }
    return MultimodalSequence(m_images.select_rows(rows), std::move(tokens));
}

MultimodalSequence build_sequence(num::Matrix image_embeddings,
                                  std::span<const std::int64_t> instruction_ids,
                                  std::span<const std::int64_t> answer_ids) {
    if (instruction_ids.empty()) {
        throw InputError("instruction must contain at least one token");
    }
    std::vector<Token> tokens;
    tokens.reserve(image_embeddings.rows() + instruction_ids.size() + answer_ids.size());
    std::size_t pos = 0;
    for (std::size_t r = 0; r < image_embeddings.rows(); ++r) {
        tokens.push_back({TokenRole::Image, pos++, -1, r});
    }
    for (std::int64_t id : instruction_ids) {
        tokens.push_back({TokenRole::Instruction, pos++, id, 0});
    }
    for (std::int64_t id : answer_ids) {
        tokens.push_back({TokenRole::Answer, pos++, id, 0});
    }
    return MultimodalSequence(std::move(image_embeddings), std::move(tokens));
}

std::size_t last_instruction_index(const MultimodalSequence& seq) {
    const auto tokens = seq.tokens();
    for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
        if (it->role == TokenRole::Instruction) {
            return it->position;
        }
    }
    throw InputError("sequence has no instruction token");
}

std::vector<std::size_t> image_indices(const MultimodalSequence& seq) {
    std::vector<std::size_t> out;
    for (const Token& t : seq.tokens()) {
        if (t.role == TokenRole::Image) {
            out.push_back(t.position);
        }
    }
    return out;
}

}  // namespace pdrop::layout
