#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "fixtures.hpp"
#include "scs/dump.hpp"
#include "scs/error.hpp"
#include "scs/rng.hpp"

namespace scs {
namespace {

ActivationDump random_dump(std::size_t layers, std::size_t tokens, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  ActivationDump d;
  d.model_id = "toy/" + std::to_string(seed);
  d.num_layers = layers;
  d.hidden_dim = dim;
  for (std::size_t t = 0; t < tokens; ++t) d.token_ids.push_back(static_cast<Token>(rng.below(50000)));
  d.residuals.resize((layers + 1) * tokens * dim);
  rng.fill_normal(d.residuals, 10.0);
  d.metadata["seed"] = std::to_string(seed);
  return d;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

ErrorKind decode_kind(const std::string& bytes, std::string* message = nullptr) {
  try {
    decode_dump(bytes);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ErrorKind::kUsage;
}

TEST(Dump, RoundTripIsBitwise) {
  testing::TempDir dir;
  auto d = random_dump(3, 17, 8, 1);
  d.residuals[5] = -0.0F;
  d.residuals[6] = 1e-45F;
  d.metadata["prompt"] = "caf\xC3\xA9 \xE2\x86\x92 \"quoted\"\n";
  write_dump(d, dir / "a.scsa");
  const auto back = read_dump(dir / "a.scsa");
  EXPECT_EQ(back.model_id, d.model_id);
  EXPECT_EQ(back.num_layers, 3u);
  EXPECT_EQ(back.hidden_dim, 8u);
  EXPECT_EQ(back.token_ids, d.token_ids);
  EXPECT_EQ(back.metadata, d.metadata);
  EXPECT_TRUE(same_bits(back.residuals, d.residuals));
  EXPECT_EQ(encode_dump(back), encode_dump(d));
}

TEST(Dump, EmptySequenceIsValid) {
  testing::TempDir dir;
  const auto d = random_dump(2, 0, 16, 2);
  write_dump(d, dir / "empty.scsa");
  const auto back = read_dump(dir / "empty.scsa");
  EXPECT_EQ(back.num_tokens(), 0u);
  EXPECT_TRUE(back.residuals.empty());
  EXPECT_EQ(back.hidden_dim, 16u);
}

TEST(Dump, LayoutIsLayerMajor) {
  const auto d = random_dump(1, 3, 2, 3);
  const std::string bytes = encode_dump(d);
  ASSERT_EQ(bytes.substr(0, 4), "SCSA");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[6 + i])) << (8 * i);
  const std::size_t payload = 10 + header_len;
  ASSERT_EQ(bytes.size() - payload, 4u * 2 * 3 * 2);
  // Element (layer 1, token 2, channel 1) sits at ((1 * T + 2) * d + 1).
  float v;
  std::memcpy(&v, bytes.data() + payload + 4 * ((1 * 3 + 2) * 2 + 1), 4);
  EXPECT_EQ(v, d.residual(1, 2)[1]);
}

TEST(Dump, CorruptMagic) {
  std::string bytes = encode_dump(random_dump(1, 2, 4, 4));
  bytes[0] = 'X';
  EXPECT_EQ(decode_kind(bytes), ErrorKind::kFormat);
  EXPECT_EQ(decode_kind("SCS"), ErrorKind::kFormat);
}

TEST(Dump, NewerVersionIsUnsupported) {
  std::string bytes = encode_dump(random_dump(1, 2, 4, 5));
  bytes[4] = 2;
  EXPECT_EQ(decode_kind(bytes), ErrorKind::kUnsupportedVersion);
}

TEST(Dump, DimensionMismatchNamesByteCounts) {
  // Header claims d=64 while the payload was written for d=32.
  auto small = random_dump(2, 3, 32, 6);
  const std::string payload = encode_dump(small).substr(encode_dump(small).size() - 4 * small.residuals.size());
  auto big = small;
  big.hidden_dim = 64;
  big.residuals.resize(3 * 3 * 64);
  std::string bytes = encode_dump(big);
  bytes.resize(bytes.size() - 4 * big.residuals.size());
  bytes += payload;
  std::string message;
  EXPECT_EQ(decode_kind(bytes, &message), ErrorKind::kFormat);
  EXPECT_NE(message.find(std::to_string(4 * 3 * 3 * 32)), std::string::npos) << message;
  EXPECT_NE(message.find(std::to_string(4 * 3 * 3 * 64)), std::string::npos) << message;
}

TEST(Dump, TruncatedPayload) {
  std::string bytes = encode_dump(random_dump(1, 4, 4, 7));
  bytes.pop_back();
  std::string message;
  EXPECT_EQ(decode_kind(bytes, &message), ErrorKind::kFormat);
  EXPECT_NE(message.find("127"), std::string::npos) << message;
  EXPECT_NE(message.find("128"), std::string::npos) << message;
}

TEST(Dump, RejectsOtherDtypes) {
  const auto d = random_dump(1, 1, 2, 8);
  std::string bytes = encode_dump(d);
  const auto pos = bytes.find("\"f32\"");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 5, "\"f16\"");
  EXPECT_EQ(decode_kind(bytes), ErrorKind::kFormat);
}

TEST(Dump, ReadsHandWrittenFile) {
  // What an external writer would produce from the format description alone.
  const std::string header =
      R"({"model_id":"ext","L":1,"d":2,"T":1,"dtype":"f32","layout":"layer-major","token_ids":[42],)"
      R"("metadata":{"source":"adapter"}})";
  std::string bytes = "SCSA";
  bytes += '\x01';
  bytes += '\x00';
  const auto len = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) bytes += static_cast<char>((len >> (8 * i)) & 0xFF);
  bytes += header;
  for (float f : {1.0F, -2.0F, 0.5F, 3.0F}) {
    unsigned char b[4];
    std::memcpy(b, &f, 4);
    bytes.append(reinterpret_cast<char*>(b), 4);
  }
  const auto d = decode_dump(bytes);
  EXPECT_EQ(d.model_id, "ext");
  EXPECT_EQ(d.token_ids, (std::vector<Token>{42}));
  EXPECT_EQ(d.residual(0, 0)[1], -2.0F);
  EXPECT_EQ(d.residual(1, 0)[0], 0.5F);
  EXPECT_EQ(d.metadata.at("source"), "adapter");
}

TEST(Dump, RandomizedRoundTrips) {
  testing::TempDir dir;
  Rng rng(9);
  for (int i = 0; i < 30; ++i) {
    const auto d = random_dump(1 + rng.below(6), rng.below(20), 1 + rng.below(40), 100 + i);
    write_dump(d, dir / "r.scsa");
    const auto back = read_dump(dir / "r.scsa");
    ASSERT_TRUE(same_bits(back.residuals, d.residuals));
    ASSERT_EQ(back.token_ids, d.token_ids);
  }
}

TEST(Dump, TraceConversion) {
  ModelConfig c;
  c.hidden_dim = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  const Model m = build_model(c);
  const std::vector<Token> tokens = {10, 20, 30};
  const auto trace = forward_trace(m, tokens);
  const auto dump = trace_to_dump(trace, m.id(), {{"k", "v"}});
  EXPECT_TRUE(same_bits(dump.residuals, trace.residuals));
  const auto back = dump_to_trace(dump);
  EXPECT_TRUE(same_bits(back.residuals, trace.residuals));
  EXPECT_EQ(back.tokens, trace.tokens);
  EXPECT_TRUE(back.logits.empty());
}

TEST(Dump, ExtractionOverDumpsMatchesInProcess) {
  ModelConfig c;
  c.hidden_dim = 32;
  c.num_layers = 3;
  c.num_heads = 4;
  c.seed = 10;
  const Model m = testing::concept_model(c, 2, testing::random_unit(32, 11), 5.0);
  const auto inputs = testing::synthetic_inputs(c, 6, 12);
  testing::TempDir dir;
  std::vector<ActivationDump> dumps;
  std::size_t i = 0;
  for (const auto& d : dump_choice_traces(m, inputs)) {
    const auto path = dir / ("d" + std::to_string(i++) + ".scsa");
    write_dump(d, path);
    dumps.push_back(read_dump(path));
  }
  const auto from_dumps = choice_activations_from_dumps(dumps);
  const auto in_process = capture_choice_activations(m, inputs);
  EXPECT_EQ(from_dumps.ids, in_process.ids);
  EXPECT_TRUE(same_bits(from_dumps.positive, in_process.positive));
  EXPECT_TRUE(same_bits(from_dumps.negative, in_process.negative));
  const auto a = concepts_from_activations(from_dumps, m.id(), "x");
  const auto b = extract_all_layers(m, inputs, "x");
  for (std::size_t l = 0; l <= c.num_layers; ++l) EXPECT_TRUE(same_bits(a[l].values, b[l].values));
}

TEST(Dump, UnpairedDumpIsRejected) {
  ModelConfig c;
  c.hidden_dim = 16;
  c.num_layers = 1;
  c.num_heads = 2;
  const Model m = build_model(c);
  const auto inputs = testing::synthetic_inputs(c, 2, 13);
  auto dumps = dump_choice_traces(m, inputs);
  dumps.pop_back();
  EXPECT_THROW(choice_activations_from_dumps(dumps), Error);
}

}  // namespace
}  // namespace scs
