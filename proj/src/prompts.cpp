#include "taxocap/prompts.hpp"

#include <sstream>

namespace taxocap::prompts {

namespace {

constexpr const char* kVerificationTemplate = R"(You are given a textual description of a species.

Your task is to determine whether the description contains any information about the species' visible appearance (including features, colors, shapes, patterns, textures, or other morphological characteristics).

Respond strictly with: "Yes" or "No".

Examples:

"Bagada is a genus of moths of the family Noctuidae."
-> No

"Aetheolaena rosana is a species of flowering plant in the family Asteraceae. It is found only in Ecuador. Its natural habitat is subtropical or tropical moist montane forests. It is threatened by habitat loss."
-> No

"The fur of the African wild dog differs significantly from that of other canids, consisting entirely of stiff bristle-hairs with no underfur. Colour variation is extreme, and may serve in visual identification."
-> Yes

"The most characteristic physical feature of the raccoon is the area of black fur around the eyes, which contrasts sharply with the surrounding white face coloring."
-> Yes

Now classify the following description:

"{content}")";

constexpr const char* kExtractionTemplate =
    R"(You are an expert taxonomy editor. Extract only the sentences (or partial sentences) that describe visual appearance:
- Colours, patterns, shapes, sizes, textures, diagnostic marks — anything visible in a photo.
- Visual differences in sex, form, or life stage should be preserved.
- Do not include behaviour, distribution, threats, taxonomy, dates, or references.
- Remove all non-visual parts from the original paragraph while maintaining sentence structure.
- Keep exactly the same descriptions from the original input; do not rewrite or rephrase.

Return exactly in the format:
<species> | <caption>

User Examples:

"The fur of the African wild dog differs significantly from that of other canids, consisting entirely of stiff bristle-hairs with no under-fur. Colour pattern is patchy black, yellow ochre and white."
-> Lycaon pictus | The fur of the African wild dog consists entirely of stiff bristle-hairs with no under-fur. Colour pattern is patchy black, yellow ochre and white.

"The most characteristic physical feature of the raccoon is the area of black fur around the eyes, which contrasts sharply with the surrounding white face colouring."
-> Procyon lotor | the area of black fur around the eyes, which contrasts sharply with the surrounding white face colouring.

"The male painted bunting is often described as the most beautiful bird in North America... Its colors, dark blue head, green back, red rump, and underparts, make it extremely easy to identify... The plumage of female and juvenile painted buntings is green and yellow-green... The adult female is a brighter, truer green than other similar songbirds."
-> Painted Bunting | The male painted bunting has a dark blue head, green back, red rump, and red underparts, making it extremely easy to identify, though it often hides in foliage. The female and juvenile painted buntings have green and yellow-green plumage, which serves as camouflage. The adult female is a brighter, truer green than other similar songbirds.

Now extract:

<species>: {species}

<description>: "{description}")";

constexpr const char* kCaptionTemplate =
    R"(You are a biologist describing organisms based strictly on what is visible in the image.

Your goal is to produce a concise caption that highlights diagnostic, image-based traits.

Focus primarily on anatomical structures (e.g., color, shape, pattern, texture, position).

If clearly visible, you may mention substrate, scale cues, or explicit interactions.

Use precise biological terminology. Avoid vague or generic words.

Examples of good captions:
{format_examples}

{wiki_block}The caption must not exceed {word_limit} words.

Include the species name "{species_name}" naturally in the sentence.

Priority order:
(1) the most diagnostic visible trait,
(2) a secondary distinctive trait,
(3) a contextual detail only if it strengthens identification.

Final instruction: For the following image of a {species_name}, write a single, concise sentence describing its visible traits.)";

constexpr const char* kWikiBlockTemplate =
    R"(If a Wikipedia excerpt is available:
Reference excerpt about {species_name}, use only to standardize correct terms that match visible traits; do not copy text; do not add traits not visible in the image: {wiki_excerpt}.

)";

std::string replace_all(std::string text, const std::string& placeholder,
                        const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(placeholder, pos)) != std::string::npos) {
        text.replace(pos, placeholder.size(), value);
        pos += value.size();
    }
    return text;
}

}  // namespace

std::string render_verification(const std::string& content) {
    return replace_all(kVerificationTemplate, "{content}", content);
}

std::string render_extraction(const std::string& species, const std::string& description) {
    std::string out = replace_all(kExtractionTemplate, "{species}", species);
    return replace_all(std::move(out), "{description}", description);
}

std::string render_caption(const CaptionPromptInputs& inputs) {
    std::ostringstream examples;
    for (std::size_t i = 0; i < inputs.format_examples.size(); ++i) {
        if (i) examples << "\n";
        examples << (i + 1) << ". " << inputs.format_examples[i];
    }
    const bool has_wiki = inputs.wiki_excerpt && !inputs.wiki_excerpt->empty();
    std::string out = kCaptionTemplate;
    out = replace_all(std::move(out), "{wiki_block}", has_wiki ? kWikiBlockTemplate : "");
    out = replace_all(std::move(out), "{word_limit}", std::to_string(inputs.word_limit));
    out = replace_all(std::move(out), "{species_name}", inputs.species_name);
    // Free-text fields go in last so their content is never treated as a
    // placeholder.
    out = replace_all(std::move(out), "{format_examples}", examples.str());
    if (has_wiki) out = replace_all(std::move(out), "{wiki_excerpt}", *inputs.wiki_excerpt);
    return out;
}

}  // namespace taxocap::prompts
