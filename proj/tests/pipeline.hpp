#pragma once

// Planted corpus -> lexicon -> vocabulary -> pretraining instances, shared by
// the training, fine-tuning, analysis and acceptance tests.

#include <memory>
#include <vector>

#include "synthetic.hpp"
#include "zengram/lexicon.hpp"
#include "zengram/masking.hpp"
#include "zengram/train.hpp"

namespace pipeline {

struct Data {
  synthetic::PlantedCorpus corpus;
  std::shared_ptr<const zengram::NgramLexicon> lexicon;
  std::shared_ptr<const zengram::Vocab> vocab;
  std::vector<zengram::TrainingInstance> instances;
};

inline Data build(std::uint64_t seed, std::size_t sentences, std::uint64_t freq_thr = 15,
                  std::size_t max_len = 64) {
  using namespace zengram;
  Data d;
  d.corpus = synthetic::planted_corpus(seed, sentences);
  const auto& s = d.corpus.sentences;
  d.lexicon = std::make_shared<const NgramLexicon>(extract_lexicon(count_ngrams(s, 4), 3.0, freq_thr));
  d.vocab = std::make_shared<const Vocab>(build_char_vocab(s, 1));
  Rng pair_rng(Rng::derive(seed, 0x9a1));
  const auto pairs = make_sentence_pairs(s, pair_rng, 0.5);
  auto matcher = d.lexicon->empty() ? nullptr : std::make_shared<const Matcher>(*d.lexicon);
  const InstanceBuilder builder(d.vocab, d.lexicon, make_segmenter("maxmatch", matcher), {max_len, 128, 0.15});
  d.instances = build_pretrain_instances(s, pairs, builder, seed);
  return d;
}

/// Tiny model sized to the data, without dropout unless asked.
inline zengram::EncoderConfig tiny(const Data& d, zengram::IntegrationMode mode, double dropout = 0.0) {
  auto c = zengram::EncoderConfig::preset("tiny");
  c.integration = mode;
  c.dropout = dropout;
  c.max_len = 64;
  c.vocab_size = d.vocab->size();
  c.ngram_vocab_size = d.lexicon->size();
  return c;
}

}  // namespace pipeline
