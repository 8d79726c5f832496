#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bayesvla/world.hpp"

namespace bayesvla::sim {

constexpr int kMaxTokens = 12;
constexpr int kPadToken = 0;
constexpr int kNumTemplates = 3;
constexpr int kNumSynonyms = 3;  // forms per content word; training corpora use a prefix

// 3 surface forms per color / container word; instructions name the target by
// color only (object colors are distinct within every scene).
inline const char* color_word(int color, int synonym) {
  static const char* words[kNumColors][kNumSynonyms] = {
      {"red", "crimson", "scarlet"},
      {"green", "emerald", "lime"},
      {"blue", "azure", "navy"},
      {"yellow", "gold", "amber"},
      {"purple", "violet", "plum"}};
  return words[color][synonym];
}

inline const char* container_word(int kind, int synonym) {
  static const char* words[kNumKinds][kNumSynonyms] = {
      {"plate", "dish", "platter"},
      {"bowl", "cup", "basin"},
      {"box", "bin", "crate"}};
  return words[kind][synonym];
}

inline const char* shape_word(int shape, int synonym) {
  static const char* words[kNumShapes][kNumSynonyms] = {
      {"cube", "block", "brick"},
      {"sphere", "ball", "orb"},
      {"bar", "stick", "rod"}};
  return words[shape][synonym];
}

inline std::string instruction_text(int template_id, int color, int kind, int synonym) {
  const std::string c = color_word(color, synonym);
  const std::string k = container_word(kind, synonym);
  switch (template_id) {
    case 0: return "pick the " + c + " one into the " + k;
    case 1: return "put the " + c + " thing in the " + k;
    default: return "move the " + c + " object to the " + k;
  }
}

// Caption wording used by encoder pretraining pairs: the object is named by
// color and shape, the container by kind. Templates 3..5 mention the object
// alone, so object words see twice the alignment pressure of container words.
constexpr int kNumCaptionTemplates = 6;

inline std::string caption_text(int template_id, int color, int shape, int kind,
                                int synonym) {
  const std::string c = color_word(color, synonym);
  const std::string s = shape_word(shape, synonym);
  const std::string k = container_word(kind, synonym);
  switch (template_id) {
    case 0: return "pick the " + c + " " + s + " into the " + k;
    case 1: return "put the " + c + " " + s + " in the " + k;
    case 2: return "move the " + c + " " + s + " to the " + k;
    case 3: return "grab the " + c + " " + s;
    case 4: return "lift the " + c + " " + s;
    default: return "take the " + c + " " + s;
  }
}

class Tokenizer {
 public:
  Tokenizer() {
    add("[pad]");
    for (const char* w : {"pick", "put", "move", "the", "one", "thing", "object",
                          "into", "in", "to", "grab", "lift", "take"})
      add(w);
    for (int c = 0; c < kNumColors; ++c)
      for (int s = 0; s < kNumSynonyms; ++s) add(color_word(c, s));
    for (int k = 0; k < kNumKinds; ++k)
      for (int s = 0; s < kNumSynonyms; ++s) add(container_word(k, s));
    for (int sh = 0; sh < kNumShapes; ++sh)
      for (int s = 0; s < kNumSynonyms; ++s) add(shape_word(sh, s));
  }

  int vocab_size() const { return static_cast<int>(words_.size()); }

  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) {
      auto it = ids_.find(w);
      if (it == ids_.end()) throw Error("tokenizer: unknown word: " + w);
      out.push_back(it->second);
    }
    if (static_cast<int>(out.size()) > kMaxTokens)
      throw Error("tokenizer: instruction longer than " + std::to_string(kMaxTokens));
    return out;
  }

  std::string detokenize(const std::vector<int>& tokens) const {
    std::string out;
    for (int t : tokens) {
      if (t == kPadToken) continue;
      if (t < 0 || t >= vocab_size()) throw Error("tokenizer: id out of range");
      if (!out.empty()) out += ' ';
      out += words_[t];
    }
    return out;
  }

 private:
  void add(const std::string& w) {
    ids_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  }
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

inline const Tokenizer& tokenizer() {
  static const Tokenizer tk;
  return tk;
}

struct Instruction {
  std::vector<int> tokens;
  int target_object_id = -1;
  int target_container_id = -1;
  int template_id = 0;
  int synonym_choice = 0;

  std::string text() const { return tokenizer().detokenize(tokens); }

  std::vector<int> padded() const {
    std::vector<int> out = tokens;
    out.resize(kMaxTokens, kPadToken);
    return out;
  }
};

inline Instruction make_instruction_for(const Scene& scene, int object_id,
                                        int container_id, int template_id,
                                        int synonym, bool caption = false) {
  const ObjectSpec* target = find_object(scene, object_id);
  const ContainerSpec* container = find_container(scene, container_id);
  if (!target || !container)
    throw Error("instruction: referenced entity missing from scene");
  // the color description must single out the target
  for (const auto& o : scene.objects)
    if (o.id != target->id && o.color == target->color)
      throw Error("instruction: target color is ambiguous in this scene");
  Instruction ins;
  ins.target_object_id = object_id;
  ins.target_container_id = container_id;
  ins.template_id = template_id;
  ins.synonym_choice = synonym;
  const std::string text =
      caption ? caption_text(template_id, target->color, target->shape,
                             container->kind, synonym)
              : instruction_text(template_id, target->color, container->kind, synonym);
  ins.tokens = tokenizer().tokenize(text);
  return ins;
}

// biased: the instruction is a deterministic function of the scene;
// diverse: target, container, template and synonym set drawn uniformly;
// caption: identifying content (the scene's intended entities) with uniformly
// varied wording — used for encoder pretraining pairs
inline Instruction make_instruction(const Scene& scene, const std::string& mode,
                                    Rng& rng, int train_synonyms) {
  if (scene.objects.empty()) throw Error("instruction: scene has no objects");
  if (mode == "biased") {
    return make_instruction_for(scene, intended_object(scene).id,
                                intended_container(scene).id, 0, 0);
  }
  if (mode == "caption") {
    const int tpl = rng.randint(0, kNumCaptionTemplates - 1);
    const int syn = rng.randint(0, train_synonyms - 1);
    return make_instruction_for(scene, intended_object(scene).id,
                                intended_container(scene).id, tpl, syn,
                                /*caption=*/true);
  }
  const int oi = rng.randint(0, static_cast<int>(scene.objects.size()) - 1);
  const int ci = rng.randint(0, static_cast<int>(scene.containers.size()) - 1);
  const int tpl = rng.randint(0, kNumTemplates - 1);
  const int syn = rng.randint(0, train_synonyms - 1);
  return make_instruction_for(scene, scene.objects[oi].id, scene.containers[ci].id,
                              tpl, syn);
}

// every text the grammar can produce for a given number of synonym choices
inline std::set<std::string> enumerate_grammar(int synonym_choices) {
  std::set<std::string> out;
  for (int tpl = 0; tpl < kNumTemplates; ++tpl)
    for (int c = 0; c < kNumColors; ++c)
      for (int k = 0; k < kNumKinds; ++k)
        for (int s = 0; s < synonym_choices; ++s)
          out.insert(instruction_text(tpl, c, k, s));
  return out;
}

inline std::size_t grammar_size(int synonym_choices) {
  return static_cast<std::size_t>(kNumTemplates) * kNumColors * kNumKinds *
         synonym_choices;
}

}  // namespace bayesvla::sim
