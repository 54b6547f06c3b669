// SPDX-License-Identifier: Apache-2.0
#include "punet/vocab.hpp"

#include <stdexcept>

namespace punet {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("vocab: " + msg);
}

}  // namespace

void Vocabulary::init(std::vector<std::string> tokens) {
  tokens_ = std::move(tokens);
  for (i64 i = 0; i < static_cast<i64>(tokens_.size()); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], i);
    if (!inserted) fail("duplicate token " + tokens_[i]);
    if (tokens_[i] == "'") prime_ = i;
  }
  if (tokens_.size() < 4 || tokens_[0] != "[blank]" || tokens_[1] != "[sos]" ||
      tokens_[2] != "[space]")
    fail("vocabulary must start with [blank] [sos] [space]");
}

Vocabulary Vocabulary::toy() {
  Vocabulary v;
  v.init({"[blank]", "[sos]", "[space]", "a", "b", "d", "e", "m", "n", "o",
          "p", "t"});
  return v;
}

Vocabulary Vocabulary::paper() {
  std::vector<std::string> tokens = {"[blank]", "[sos]", "[space]", "'"};
  for (char c = 'a'; c <= 'z'; ++c) tokens.emplace_back(1, c);
  for (char c = '0'; c <= '9'; ++c) tokens.emplace_back(1, c);
  Vocabulary v;
  v.init(std::move(tokens));
  return v;
}

const std::string& Vocabulary::token(i64 id) const {
  if (id < 0 || id >= size()) fail("token id " + std::to_string(id) +
                                   " outside vocabulary of " +
                                   std::to_string(size()));
  return tokens_[id];
}

i64 Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) fail("unknown token '" + token + "'");
  return it->second;
}

std::vector<i64> Vocabulary::encode(const std::string& text) const {
  std::vector<i64> out;
  for (char c : text) {
    if (c == ' ')
      out.push_back(space());
    else
      out.push_back(id(std::string(1, c)));
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<i64>& ids) const {
  std::string out;
  for (i64 id : ids) {
    if (id == blank() || id == sos()) continue;
    if (id == space())
      out += ' ';
    else
      out += token(id);
  }
  return out;
}

VisemeMap VisemeMap::toy(const Vocabulary& vocab) {
  VisemeMap m;
  m.viseme_of.assign(vocab.size(), 0);  // specials default to silence
  const std::vector<std::vector<std::string>> groups = {
      {"a"}, {"b", "m", "p"}, {"d", "n", "t"}, {"e"}, {"o"}};
  i64 next = 1;
  for (const auto& group : groups) {
    for (const auto& tok : group) m.viseme_of[vocab.id(tok)] = next;
    ++next;
  }
  m.viseme_count = next;
  return m;
}

i64 VisemeMap::fan_in(i64 viseme) const {
  i64 n = 0;
  for (i64 v : viseme_of) n += (v == viseme) ? 1 : 0;
  return n;
}

i64 VisemeMap::max_fan_in() const {
  i64 best = 0;
  for (i64 v = 0; v < viseme_count; ++v) best = std::max(best, fan_in(v));
  return best;
}

}  // namespace punet
