/* Copyright 2026 The FuseMOD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "fusemod/error.hpp"
#include "fusemod/models.hpp"

namespace fusemod::models {

int signal_channels(SignalKind kind)
{
  switch (kind) {
    case SignalKind::Rgb:
    case SignalKind::RgbT:
    case SignalKind::RgbT1:
      return 3;
    case SignalKind::RgbFlow:
    case SignalKind::LidarFlow:
      return 2;
    case SignalKind::LidarDepth:
    case SignalKind::DepthT:
    case SignalKind::DepthT1:
      return 1;
  }
  return 0;
}

std::string_view signal_token(SignalKind kind)
{
  switch (kind) {
    case SignalKind::Rgb: return "rgb";
    case SignalKind::RgbFlow: return "rgbflow";
    case SignalKind::LidarFlow: return "lidarflow";
    case SignalKind::LidarDepth: return "depth";
    case SignalKind::RgbT: return "rgb_t";
    case SignalKind::RgbT1: return "rgb_t1";
    case SignalKind::DepthT: return "depth_t";
    case SignalKind::DepthT1: return "depth_t1";
  }
  return "?";
}

std::optional<SignalKind> parse_signal(std::string_view token)
{
  std::string t(token);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  struct Alias {
    const char* name;
    SignalKind kind;
  };
  static constexpr Alias aliases[] = {
      {"rgb", SignalKind::Rgb},           {"rgbflow", SignalKind::RgbFlow},
      {"rgb_flow", SignalKind::RgbFlow},  {"lidarflow", SignalKind::LidarFlow},
      {"lidar_flow", SignalKind::LidarFlow}, {"depth", SignalKind::LidarDepth},
      {"lidar", SignalKind::LidarDepth},  {"lidardepth", SignalKind::LidarDepth},
      {"lidar_depth", SignalKind::LidarDepth}, {"rgb_t", SignalKind::RgbT},
      {"rgbt", SignalKind::RgbT},         {"rgb_t1", SignalKind::RgbT1},
      {"rgbt1", SignalKind::RgbT1},       {"rgb_next", SignalKind::RgbT1},
      {"depth_t", SignalKind::DepthT},    {"deptht", SignalKind::DepthT},
      {"depth_t1", SignalKind::DepthT1},  {"deptht1", SignalKind::DepthT1},
      {"depth_next", SignalKind::DepthT1},
  };
  for (const auto& a : aliases)
    if (t == a.name) return a.kind;
  return std::nullopt;
}

namespace {

struct Token {
  enum Kind { Word, Plus, Times, Open, Close } kind;
  std::string text;
};

std::vector<Token> tokenize(std::string_view text)
{
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (c == '+') {
      out.push_back({Token::Plus, "+"});
      ++i;
    } else if (c == '*') {
      out.push_back({Token::Times, "x"});
      ++i;
    } else if (c == '(') {
      out.push_back({Token::Open, "("});
      ++i;
    } else if (c == ')') {
      out.push_back({Token::Close, ")"});
      ++i;
    } else if (std::isalnum(c) || c == '_') {
      std::size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
      std::string word(text.substr(i, j - i));
      std::transform(word.begin(), word.end(), word.begin(), [](unsigned char ch) { return std::tolower(ch); });
      out.push_back({word == "x" ? Token::Times : Token::Word, word});
      i = j;
    } else {
      throw Error(ErrorCode::InvalidPlan, "unexpected character '" + std::string(1, text[i]) + "'");
    }
  }
  return out;
}

}  // namespace

FusionPlan FusionPlan::parse(std::string_view text)
{
  auto tokens = tokenize(text);
  if (tokens.size() == 1 && tokens[0].kind == Token::Word) {
    const auto& w = tokens[0].text;
    if (w == "baseline") return {{{SignalKind::Rgb}}};
    if (w == "two") return {{{SignalKind::Rgb}, {SignalKind::RgbFlow}}};
    if (w == "three") return {{{SignalKind::Rgb}, {SignalKind::RgbFlow}, {SignalKind::LidarFlow}}};
  }

  FusionPlan plan;
  std::size_t i = 0;
  auto fail = [&](const std::string& what) -> Error {
    return Error(ErrorCode::InvalidPlan, what + " in '" + std::string(text) + "'");
  };
  auto signal = [&]() {
    if (i >= tokens.size() || tokens[i].kind != Token::Word) throw fail("expected a signal");
    auto kind = parse_signal(tokens[i].text);
    if (!kind) throw fail("unknown signal '" + tokens[i].text + "'");
    ++i;
    return *kind;
  };
  while (true) {
    const bool paren = i < tokens.size() && tokens[i].kind == Token::Open;
    if (paren) ++i;
    std::vector<SignalKind> stream{signal()};
    while (i < tokens.size() && tokens[i].kind == Token::Times) {
      ++i;
      stream.push_back(signal());
    }
    if (paren) {
      if (i >= tokens.size() || tokens[i].kind != Token::Close) throw fail("missing ')'");
      ++i;
    }
    plan.streams.push_back(std::move(stream));
    if (i == tokens.size()) break;
    if (tokens[i].kind != Token::Plus) throw fail("expected '+'");
    ++i;
  }
  plan.validate();
  return plan;
}

void FusionPlan::validate() const
{
  if (streams.empty()) throw Error(ErrorCode::InvalidPlan, "no streams");
  for (const auto& s : streams) {
    if (s.empty()) throw Error(ErrorCode::InvalidPlan, "empty stream");
    for (std::size_t a = 0; a < s.size(); ++a)
      for (std::size_t b = a + 1; b < s.size(); ++b)
        if (s[a] == s[b]) {
          throw Error(ErrorCode::InvalidPlan, "signal '" + std::string(signal_token(s[a])) + "' repeated in a stream");
        }
  }
}

std::string FusionPlan::to_string() const
{
  std::string out;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (i) out += " + ";
    const auto& s = streams[i];
    if (s.size() > 1) out += "(";
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j) out += " x ";
      out += signal_token(s[j]);
    }
    if (s.size() > 1) out += ")";
  }
  return out;
}

int FusionPlan::stream_channels(std::size_t stream) const
{
  int c = 0;
  for (auto k : streams.at(stream)) c += signal_channels(k);
  return c;
}

std::vector<SignalKind> FusionPlan::signals() const
{
  std::vector<SignalKind> out;
  for (const auto& s : streams)
    for (auto k : s)
      if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  return out;
}

EncoderSpec EncoderSpec::from_name(std::string_view name)
{
  if (name == "tiny") return tiny();
  if (name == "full") return full();
  const auto bad = [&] { return Error(ErrorCode::InvalidConfig, "unknown encoder profile '" + std::string(name) + "'"); };
  EncoderSpec s;
  int pool = 1;
  const int n = std::sscanf(std::string(name).c_str(), "conv1=%d stride=%d pool=%d groups=%d units=%d,%d,%d channels=%d,%d,%d",
                            &s.conv1_channels, &s.conv1_stride, &pool, &s.groups, &s.stage_units[0], &s.stage_units[1],
                            &s.stage_units[2], &s.stage_channels[0], &s.stage_channels[1], &s.stage_channels[2]);
  if (n != 10) throw bad();
  s.pool = pool != 0;
  s.validate();
  return s;
}

std::string EncoderSpec::to_string() const
{
  char buf[160];
  std::snprintf(buf, sizeof buf, "conv1=%d stride=%d pool=%d groups=%d units=%d,%d,%d channels=%d,%d,%d", conv1_channels,
                conv1_stride, pool ? 1 : 0, groups, stage_units[0], stage_units[1], stage_units[2], stage_channels[0],
                stage_channels[1], stage_channels[2]);
  return buf;
}

void EncoderSpec::validate() const
{
  auto bad = [](const std::string& what) { return Error(ErrorCode::InvalidConfig, "encoder: " + what); };
  if (groups < 1 || conv1_channels < 1 || conv1_stride < 1) throw bad("non-positive size");
  if (conv1_channels % groups) throw bad("conv1 channels not divisible by groups");
  int in = conv1_channels;
  for (int s = 0; s < 3; ++s) {
    const int out = stage_channels[s];
    if (stage_units[s] < 1) throw bad("stage without units");
    if (out % 4 || (out / 4) % groups) throw bad("bottleneck of stage " + std::to_string(s + 2) + " not divisible by groups");
    if (out <= in || (out - in) % groups) throw bad("stage " + std::to_string(s + 2) + " branch width not divisible by groups");
    if (out % groups) throw bad("stage channels not divisible by groups");
    in = out;
  }
}

}  // namespace fusemod::models
