#pragma once

// Synthetic dubbing world. Labels are planted in known visual channels and
// drive the target speech features, so reasoning accuracy and condition
// following can be scored against exact ground truth.
//
// Visual frame (20 channels):
//   0-2   scene one-hot * 1.5
//   3     people on screen
//   4     talking * 1.5
//   5-7   gender one-hot, 8-11 age one-hot, 12-18 emotion one-hot
//   19    pure noise
// plus N(0, noise^2) per entry, noise = 0.8 (level1) or 1.2 (level2).
//
// Speech frame (12 channels):
//   0-7   gender + age + emotion + speaker offsets, plus sigma(emotion) noise
//   8-11  +/-1 code of the word aligned to the frame, plus 0.05 noise

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cotdub/conditions.hpp"
#include "cotdub/features.hpp"
#include "cotdub/labels.hpp"
#include "cotdub/policy.hpp"

namespace cotdub::pipeline {

inline constexpr Eigen::Index kVisualDim = 20;
inline constexpr Eigen::Index kSpeechDim = 12;
inline constexpr Eigen::Index kAcousticDim = 8;
inline constexpr Eigen::Index kContentOffset = 8;
inline constexpr Eigen::Index kContentDim = 4;

enum class Split { train, val, test };
enum class Level { level1, level2 };

inline constexpr std::array<std::string_view, 3> kSplitNames{"train", "val", "test"};
inline constexpr std::array<std::string_view, 2> kLevelNames{"level1", "level2"};

inline std::string_view to_string(Split s) { return kSplitNames[static_cast<std::size_t>(s)]; }
inline std::string_view to_string(Level l) { return kLevelNames[static_cast<std::size_t>(l)]; }

inline Split parse_split(std::string_view s) {
  for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
    if (kSplitNames[i] == s) return static_cast<Split>(i);
  }
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

inline Level parse_level(std::string_view s) {
  for (std::size_t i = 0; i < kLevelNames.size(); ++i) {
    if (kLevelNames[i] == s) return static_cast<Level>(i);
  }
  throw std::invalid_argument("unknown level '" + std::string(s) + "'");
}

/// Independent generator for a (seed, stream) pair.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Vocabulary and transcripts

inline constexpr std::array<std::string_view, 16> kVocabulary{
    "i",   "you",  "we",   "they",              // pronouns
    "see", "need", "take", "keep",              // verbs
    "the", "a",                                 // articles
    "door", "light", "road", "plan",            // nouns
    "now", "again",                             // adverbs
};

inline constexpr int kVocabSize = static_cast<int>(kVocabulary.size());

inline Vector word_code(int word) {
  if (word < 0 || word >= kVocabSize) throw std::out_of_range("word_code: bad word id");
  Vector c(kContentDim);
  for (Eigen::Index b = 0; b < kContentDim; ++b) c[b] = ((word >> b) & 1) ? 1.0 : -1.0;
  return c;
}

/// Nearest word code (sign pattern) of a content vector.
inline int decode_word(const Eigen::Ref<const Eigen::RowVectorXd>& content) {
  int w = 0;
  for (Eigen::Index b = 0; b < kContentDim; ++b) {
    if (content[b] > 0.0) w |= 1 << b;
  }
  return w;
}

/// Lower-cased whitespace tokens with punctuation removed.
inline std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (std::isalnum(u) || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::vector<int> tokenize_transcript(std::string_view text) {
  std::vector<int> ids;
  for (const auto& w : normalize_words(text)) {
    const auto it = std::find(kVocabulary.begin(), kVocabulary.end(), w);
    if (it == kVocabulary.end()) throw std::invalid_argument("transcript word '" + w + "' is not in the vocabulary");
    ids.push_back(static_cast<int>(it - kVocabulary.begin()));
  }
  if (ids.empty()) throw std::invalid_argument("empty transcript");
  return ids;
}

/// Frame-wise decoding of the content channels with repeats collapsed.
inline std::vector<std::string> decode_transcript(const FeatureSeq& speech) {
  std::vector<std::string> words;
  int prev = -1;
  for (Eigen::Index f = 0; f < speech.num_frames(); ++f) {
    const int w = decode_word(speech.frames.row(f).segment(kContentOffset, kContentDim));
    if (w != prev) words.emplace_back(kVocabulary[static_cast<std::size_t>(w)]);
    prev = w;
  }
  return words;
}

namespace detail {

template <class Rng>
std::vector<int> clause(Rng& rng, bool with_adverb) {
  std::uniform_int_distribution<int> four(0, 3);
  std::uniform_int_distribution<int> two(0, 1);
  std::vector<int> c{four(rng), 4 + four(rng), 8 + two(rng), 10 + four(rng)};
  if (with_adverb) c.push_back(14 + two(rng));
  return c;
}

inline std::string sentence_text(const std::vector<int>& words, std::size_t begin, std::size_t end) {
  std::string s;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) s += ' ';
    s += kVocabulary[static_cast<std::size_t>(words[i])];
  }
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s + '.';
}

}  // namespace detail

/// One or two short clauses, each "pronoun verb article noun [adverb]".
template <class Rng>
TokenSeq make_transcript(Rng& rng) {
  std::uniform_int_distribution<int> shape(0, 3);
  const int k = shape(rng);
  std::vector<int> words = detail::clause(rng, k % 2 == 1);
  const std::size_t first = words.size();
  if (k >= 2) {
    const auto second = detail::clause(rng, false);
    words.insert(words.end(), second.begin(), second.end());
  }
  std::string text = detail::sentence_text(words, 0, first);
  if (words.size() > first) text += ' ' + detail::sentence_text(words, first, words.size());
  return TokenSeq{std::move(words), std::move(text)};
}

// ---------------------------------------------------------------------------
// World tables

struct WorldTables {
  std::array<Vector, 3> gender;
  std::array<Vector, 4> age;
  std::array<Vector, 7> emotion;
  std::vector<Vector> speaker;
  std::array<double, 7> emotion_sigma{};
};

inline constexpr std::array<double, 4> kAgeRate{0.85, 0.9, 0.97, 1.0};
inline constexpr std::array<double, 7> kEmotionRate{1.0, 0.95, 1.05, 0.9, 0.93, 0.92, 1.0};

/// Speech-to-clip duration ratio.
inline double fill_ratio(Age a, Emotion e) {
  return kAgeRate[static_cast<std::size_t>(a)] * kEmotionRate[static_cast<std::size_t>(e)];
}

template <class Rng>
WorldTables make_tables(Rng& rng, int num_speakers) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto draw = [&](double scale) {
    Vector v(kAcousticDim);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * n(rng);
    return v;
  };
  WorldTables t;
  for (auto& g : t.gender) g = draw(1.0);
  for (auto& a : t.age) a = draw(0.7);
  for (auto& e : t.emotion) e = draw(0.7);
  for (int s = 0; s < num_speakers; ++s) t.speaker.push_back(draw(0.3));
  for (std::size_t e = 0; e < t.emotion_sigma.size(); ++e) t.emotion_sigma[e] = 0.3 + 0.05 * static_cast<double>(e);
  return t;
}

// ---------------------------------------------------------------------------
// Items

struct Item {
  std::string id;
  int speaker = 0;
  Conclusion gold;
  SceneObservation truth;  // planted people count / talking flag
  TokenSeq transcript;
  VisualFeatureSeq visual;
  FeatureSeq speech;
  double duration_s = 0.0;
  Split split = Split::train;
  Level level = Level::level1;
};

/// Reads the people count and talking flag off the planted channels.
inline SceneObservation observe(const VisualFeatureSeq& v) {
  const Vector m = v.frames.colwise().mean().transpose();
  SceneObservation o;
  o.people = std::max(0, static_cast<int>(std::lround(m[3])));
  o.talking = m[4] > 0.75;
  return o;
}

inline PolicyPrompt policy_prompt(const VisualFeatureSeq& v) {
  return PolicyPrompt{v.frames.colwise().mean().transpose(), observe(v)};
}

/// Largest-remainder allocation of `n` items over the weights.
inline std::vector<int> allocate(int n, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double share = n * weights[i] / total;
    counts[i] = static_cast<int>(std::floor(share));
    used += counts[i];
    rem.emplace_back(share - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n - used; ++k) ++counts[rem[static_cast<std::size_t>(k)].second];
  return counts;
}

struct Cell {
  Level level;
  Split split;
  double weight;
};

/// Level-1 7276 train / 1100 test and Level-2 3486 / 388, with a tenth of
/// each training pool held out for validation.
inline const std::array<Cell, 6>& split_cells() {
  static const std::array<Cell, 6> cells{{
      {Level::level1, Split::train, 0.9 * 7276},
      {Level::level1, Split::val, 0.1 * 7276},
      {Level::level1, Split::test, 1100},
      {Level::level2, Split::train, 0.9 * 3486},
      {Level::level2, Split::val, 0.1 * 3486},
      {Level::level2, Split::test, 388},
  }};
  return cells;
}

struct WorldOptions {
  int n_items = 600;
  double frame_hop = 0.04;
  double fps = 25.0;
};

struct World {
  WorldTables tables;
  std::vector<Item> items;
};

template <class Rng>
SceneObservation draw_observation(SceneType scene, Rng& rng) {
  switch (scene) {
    case SceneType::dialogue: return {std::uniform_int_distribution<int>(2, 3)(rng), true};
    case SceneType::monologue: return {1, true};
    case SceneType::narration: return {std::uniform_int_distribution<int>(0, 2)(rng), false};
  }
  return {};
}

inline World synthesize_world(const WorldOptions& opt, std::uint64_t seed) {
  if (opt.n_items < 3) throw std::invalid_argument("synthesize_world: need at least 3 items");
  auto rng = stream_rng(seed, 0);
  const int n_spk = std::max(2, opt.n_items / 6);
  World w;
  w.tables = make_tables(rng, n_spk);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> word_len(0.3, 0.45);
  std::uniform_int_distribution<int> emotion_pick(0, 5);

  // Stratified split assignment per scene.
  std::vector<Cell> assignment(static_cast<std::size_t>(opt.n_items));
  std::vector<double> weights;
  for (const auto& c : split_cells()) weights.push_back(c.weight);
  for (int scene = 0; scene < 3; ++scene) {
    std::vector<int> members;
    for (int i = scene; i < opt.n_items; i += 3) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const auto counts = allocate(static_cast<int>(members.size()), weights);
    std::size_t pos = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      for (int k = 0; k < counts[c]; ++k) assignment[static_cast<std::size_t>(members[pos++])] = split_cells()[c];
    }
  }

  for (int i = 0; i < opt.n_items; ++i) {
    Item it;
    char id[32];
    std::snprintf(id, sizeof(id), "clip%05d", i);
    it.id = id;
    it.speaker = (i / 3) % n_spk;
    it.split = assignment[static_cast<std::size_t>(i)].split;
    it.level = assignment[static_cast<std::size_t>(i)].level;
    it.gold.scene = static_cast<SceneType>(i % 3);
    it.gold.attributes.gender = static_cast<Gender>(it.speaker % 2);
    it.gold.attributes.age = static_cast<Age>((it.speaker / 2) % 3);
    it.gold.attributes.emotion = static_cast<Emotion>(emotion_pick(rng));
    it.truth = draw_observation(it.gold.scene, rng);
    it.transcript = make_transcript(rng);

    double clip_s = 0.0;
    for (std::size_t k = 0; k < it.transcript.tokens.size(); ++k) clip_s += word_len(rng);
    const auto frames_v = std::max<Eigen::Index>(1, std::lround(clip_s * opt.fps));

    const double noise = it.level == Level::level1 ? 0.8 : 1.2;
    Vector base = Vector::Zero(kVisualDim);
    base[static_cast<Eigen::Index>(it.gold.scene)] = 1.5;
    base[3] = it.truth.people;
    base[4] = it.truth.talking ? 1.5 : 0.0;
    base[5 + static_cast<Eigen::Index>(it.gold.attributes.gender)] = 1.0;
    base[8 + static_cast<Eigen::Index>(it.gold.attributes.age)] = 1.0;
    base[12 + static_cast<Eigen::Index>(it.gold.attributes.emotion)] = 1.0;
    Matrix vis(frames_v, kVisualDim);
    for (Eigen::Index f = 0; f < frames_v; ++f) {
      for (Eigen::Index d = 0; d < kVisualDim; ++d) vis(f, d) = base[d] + noise * n01(rng);
    }
    it.visual = VisualFeatureSeq{std::move(vis), opt.fps};

    const auto g = static_cast<std::size_t>(it.gold.attributes.gender);
    const auto a = static_cast<std::size_t>(it.gold.attributes.age);
    const auto e = static_cast<std::size_t>(it.gold.attributes.emotion);
    it.duration_s = it.visual.duration() * fill_ratio(it.gold.attributes.age, it.gold.attributes.emotion) *
                    std::exp(0.02 * n01(rng));
    const auto frames_s = std::max<Eigen::Index>(1, std::lround(it.duration_s / opt.frame_hop));
    const Vector mu = w.tables.gender[g] + w.tables.age[a] + w.tables.emotion[e] +
                      w.tables.speaker[static_cast<std::size_t>(it.speaker)];
    const double sigma = w.tables.emotion_sigma[e];
    Matrix sp(frames_s, kSpeechDim);
    const auto& toks = it.transcript.tokens;
    for (Eigen::Index f = 0; f < frames_s; ++f) {
      for (Eigen::Index d = 0; d < kAcousticDim; ++d) sp(f, d) = mu[d] + sigma * n01(rng);
      const Vector code = word_code(toks[aligned_token(f, frames_s, toks.size())]);
      for (Eigen::Index d = 0; d < kContentDim; ++d) sp(f, kContentOffset + d) = code[d] + 0.05 * n01(rng);
    }
    it.speech = FeatureSeq(std::move(sp), opt.frame_hop);
    w.items.push_back(std::move(it));
  }
  return w;
}

/// Gold trace for an item, built from its planted observation.
inline std::string gold_trace_text(const Item& it) { return render_trace(compose_trace(it.truth, it.gold)); }

}  // namespace cotdub::pipeline
