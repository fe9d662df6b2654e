#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "pdrop/numkernel.hpp"

namespace pdrop::layout {

enum class TokenRole : std::uint8_t { Image, Instruction, Answer };

std::string_view to_string(TokenRole role) noexcept;

/// One token slot. Image tokens carry `image_row` into the sequence's
/// embedding matrix; text tokens carry a vocabulary id.
struct Token {
    TokenRole role = TokenRole::Instruction;
    std::size_t position = 0;
    std::int64_t token_id = -1;
    std::size_t image_row = 0;
};

/// [image | instruction | answer] token layout with original positions.
///
/// Positions are strictly increasing in storage order and every Image token
/// precedes every text token, so the last instruction token sees all image
/// tokens under causal masking. Dropping images keeps the surviving tokens'
/// original positions.
class MultimodalSequence {
public:
    /// Validates the layout invariants; throws InputError on violation.
    MultimodalSequence(num::Matrix image_embeddings, std::vector<Token> tokens);

    std::span<const Token> tokens() const noexcept { return m_tokens; }
    const num::Matrix& image_embeddings() const noexcept { return m_images; }
    std::size_t size() const noexcept { return m_tokens.size(); }
    std::size_t image_count() const noexcept;
    std::size_t embedding_dim() const noexcept { return m_images.cols(); }
    bool has_instruction() const noexcept;

    /// Copy retaining only the image tokens whose positions are listed in
    /// `kept_positions`; text tokens and all positions are preserved.
    MultimodalSequence retain_images(std::span<const std::size_t> kept_positions) const;

private:
    num::Matrix m_images;
    std::vector<Token> m_tokens;
};

/// Concatenates [image | instruction | answer] with positions 0..n-1.
/// Throws InputError on an empty instruction.
MultimodalSequence build_sequence(num::Matrix image_embeddings,
                                  std::span<const std::int64_t> instruction_ids,
                                  std::span<const std::int64_t> answer_ids);

/// Position of the final Instruction token.
std::size_t last_instruction_index(const MultimodalSequence& seq);

/// Ascending original positions of the Image tokens.
std::vector<std::size_t> image_indices(const MultimodalSequence& seq);

}  // namespace pdrop::layout
