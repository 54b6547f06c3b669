// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "punet/tensor.hpp"

namespace punet {

// Ordered token inventory. [blank] is reserved for CTC; [sos] marks both
// start and end of a character sequence.
class Vocabulary {
 public:
  // 12 tokens: [blank] [sos] [space] a b d e m n o p t
  static Vocabulary toy();
  // 40 tokens: [blank] [sos] [space] ['] a-z 0-9
  static Vocabulary paper();

  i64 size() const { return static_cast<i64>(tokens_.size()); }
  i64 blank() const { return 0; }
  i64 sos() const { return 1; }
  i64 space() const { return 2; }
  i64 prime() const { return prime_; }  // -1 when absent

  const std::string& token(i64 id) const;
  i64 id(const std::string& token) const;
  bool has(const std::string& token) const { return index_.count(token) > 0; }

  // Text <-> ids. Spaces map to [space]; [blank]/[sos] never appear in text.
  std::vector<i64> encode(const std::string& text) const;
  std::string decode(const std::vector<i64>& ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, i64> index_;
  i64 prime_ = -1;

  void init(std::vector<std::string> tokens);
};

// Surjective token -> viseme map. Specials and [space] share the silence
// viseme; several consonants collapse onto one lip shape.
struct VisemeMap {
  std::vector<i64> viseme_of;  // indexed by token id
  i64 viseme_count = 0;

  // silence:{[blank],[sos],[space]}  a  {b,m,p}  {d,n,t}  e  o
  static VisemeMap toy(const Vocabulary& vocab);

  i64 fan_in(i64 viseme) const;
  i64 max_fan_in() const;
};

}  // namespace punet
