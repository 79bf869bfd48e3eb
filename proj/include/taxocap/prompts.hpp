#pragma once

#include <optional>
#include <string>
#include <vector>

namespace taxocap::prompts {

// Yes/no check for whether a paragraph describes visible appearance. The
// paragraph is embedded verbatim.
std::string render_verification(const std::string& content);

// Strict-format extraction of the visual sentences; the reply must come back
// as "<species> | <caption>".
std::string render_extraction(const std::string& species, const std::string& description);

struct CaptionPromptInputs {
    std::string species_name;
    std::vector<std::string> format_examples;  // rendered as a numbered list
    std::optional<std::string> wiki_excerpt;   // block omitted entirely when absent
    int word_limit = 40;
};

std::string render_caption(const CaptionPromptInputs& inputs);

}  // namespace taxocap::prompts
