// Copyright 2026 The Timewarp Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "timewarp/wire_protocol.h"

#include <random>

#include <gtest/gtest.h>

#include "timewarp/framing.h"

namespace timewarp {
namespace {

using nlohmann::json;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no timewarp::Error thrown";
  return ErrorCode::kProtocolError;
}

TEST(WireFrameTest, ClockUpdateExactBytes) {
  std::string frame = encode(ClockUpdate{ClockOffset(Nanos(0)), 1});
  const std::string body = R"({"offset":"0","seq":1,"type":"CLOCK_UPDATE"})";
  ASSERT_EQ(body.size(), 44u);
  std::string expected("\x00\x00\x00\x2c", 4);
  expected += body;
  EXPECT_EQ(frame, expected);
}

TEST(WireFrameTest, JumpRequestExactBytes) {
  std::string frame =
      encode(JumpRequest{"actor-0", VirtualTimestamp(1'000'000'000)});
  const std::string body =
      R"({"client_id":"actor-0","target":"1000000000","type":"JUMP_REQUEST"})";
  std::string expected("\x00\x00\x00\x43", 4);
  expected += body;
  EXPECT_EQ(frame, expected);
  auto decoded = std::get<JumpRequest>(decode(frame));
  EXPECT_EQ(decoded.target.ns(), 1'000'000'000);
}

TEST(WireFrameTest, DeclaredLengthLongerThanBufferIsTooShort) {
  std::string frame = encode(ClockUpdate{ClockOffset(Nanos(5)), 2});
  EXPECT_EQ(code_of([&] { decode(frame.substr(0, frame.size() - 1)); }),
            ErrorCode::kFrameTooShort);
  EXPECT_EQ(code_of([&] { decode(frame.substr(0, 3)); }),
            ErrorCode::kFrameTooShort);
  EXPECT_EQ(code_of([&] { decode(""); }), ErrorCode::kFrameTooShort);
}

TEST(WireFrameTest, OversizedLengthIsMalformed) {
  std::string frame("\xff\xff\xff\xff", 4);
  EXPECT_EQ(code_of([&] { decode(frame); }), ErrorCode::kMalformedBody);
}

TEST(WireFrameTest, MissingTypeIsMalformed) {
  EXPECT_EQ(code_of([&] { decode(make_frame(R"({"offset":"0","seq":1})")); }),
            ErrorCode::kMalformedBody);
}

TEST(WireFrameTest, UnknownTypeIsMalformed) {
  EXPECT_EQ(code_of([&] { decode(make_frame(R"({"type":"NOPE"})")); }),
            ErrorCode::kMalformedBody);
}

TEST(WireFrameTest, InvalidJsonIsMalformed) {
  EXPECT_EQ(code_of([&] { decode(make_frame("{not json")); }),
            ErrorCode::kMalformedBody);
}

TEST(WireFrameTest, MissingOrMistypedFieldIsMalformed) {
  EXPECT_EQ(code_of([&] {
              decode(make_frame(R"({"type":"JUMP_REQUEST","client_id":"a"})"));
            }),
            ErrorCode::kMalformedBody);
  EXPECT_EQ(code_of([&] {
              decode(make_frame(
                  R"({"type":"JUMP_REQUEST","client_id":"a","target":"12x"})"));
            }),
            ErrorCode::kMalformedBody);
  EXPECT_EQ(code_of([&] {
              decode(make_frame(
                  R"({"type":"CLOCK_UPDATE","offset":"-1","seq":1})"));
            }),
            ErrorCode::kMalformedBody);
}

TEST(WireFrameTest, ExtraFieldsAreIgnored) {
  Message m = decode(make_frame(
      R"({"type":"CLOCK_UPDATE","offset":"7","seq":3,"future":[1,2]})"));
  EXPECT_EQ(std::get<ClockUpdate>(m), (ClockUpdate{ClockOffset(Nanos(7)), 3}));
}

TEST(WireFrameTest, IntegerNanosecondsAreAccepted) {
  Message m = decode(make_frame(
      R"({"type":"JUMP_ACK","client_id":"a","target":123456789012345})"));
  EXPECT_EQ(std::get<JumpAckMsg>(m).target.ns(), 123456789012345);
}

TEST(WireFrameTest, LargeTimestampsSurviveExactly) {
  const int64_t big = std::numeric_limits<int64_t>::max();
  Message in = JumpRequest{"actor-9", VirtualTimestamp(big)};
  EXPECT_EQ(decode(encode(in)), in);
  Message near = JumpRequest{"actor-9", VirtualTimestamp((1ll << 53) + 1)};
  EXPECT_EQ(decode(encode(near)), near);
}

std::vector<Message> one_of_each() {
  return {
      RegisterMsg{Role::kObserver},
      RegisterAckMsg{"actor-3", Role::kActor, ClockOffset(Nanos(17)), 4},
      SealMsg{},
      JumpRequest{"actor-1", VirtualTimestamp(99)},
      JumpWithdrawMsg{"actor-1"},
      JumpAckMsg{"actor-1", VirtualTimestamp(99)},
      ClockUpdate{ClockOffset(Nanos(1234)), 9},
      CollectiveEnterMsg{"actor-2", "tp/s0", 4},
      CollectiveReleaseMsg{"tp/s0", 7, VirtualTimestamp(55)},
      DeregisterMsg{"actor-2"},
      ShutdownMsg{},
      ErrorMsg{ErrorCode::kExpectedMismatch, "mismatch"},
      DiagnoseMsg{},
      DiagnosticsMsg{json{{"pending", json::object()}}},
  };
}

TEST(WireRoundTripTest, EveryMessageType) {
  for (const Message& m : one_of_each()) {
    Message back = decode(encode(m));
    EXPECT_EQ(back, m) << to_string(type_of(m));
    EXPECT_EQ(type_of(back), type_of(m));
  }
}

std::string random_id(std::mt19937_64& rng) {
  static const char kChars[] = "abcdefghijklmnopqrstuvwxyz0123456789-/\"\\";
  std::string s;
  size_t n = rng() % 12;
  for (size_t i = 0; i < n; ++i) s += kChars[rng() % (sizeof(kChars) - 1)];
  return s;
}

Message random_message(std::mt19937_64& rng) {
  auto ts = [&] {
    return VirtualTimestamp(static_cast<int64_t>(rng() >> 1) *
                            ((rng() & 1) ? 1 : -1));
  };
  auto off = [&] { return ClockOffset(Nanos(static_cast<int64_t>(rng() >> 1))); };
  switch (rng() % 9) {
    case 0:
      return RegisterMsg{(rng() & 1) ? Role::kActor : Role::kObserver};
    case 1:
      return RegisterAckMsg{random_id(rng),
                            (rng() & 1) ? Role::kActor : Role::kObserver, off(),
                            rng() >> 1};
    case 2:
      return JumpRequest{random_id(rng), ts()};
    case 3:
      return JumpAckMsg{random_id(rng), ts()};
    case 4:
      return ClockUpdate{off(), rng() >> 1};
    case 5:
      return CollectiveEnterMsg{random_id(rng), random_id(rng),
                                static_cast<int64_t>(rng() % 1000)};
    case 6:
      return CollectiveReleaseMsg{random_id(rng),
                                  static_cast<int64_t>(rng() % 100000), ts()};
    case 7:
      return DeregisterMsg{random_id(rng)};
    default:
      return JumpWithdrawMsg{random_id(rng)};
  }
}

TEST(WireRoundTripTest, RandomMessages) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    Message m = random_message(rng);
    ASSERT_EQ(decode(encode(m)), m) << to_json_body(m).dump();
  }
}

TEST(FrameBufferTest, SplitsConcatenatedFramesAtAnyChunking) {
  std::mt19937_64 rng(5);
  std::vector<Message> msgs;
  std::string stream;
  for (int i = 0; i < 200; ++i) {
    msgs.push_back(random_message(rng));
    stream += encode(msgs.back());
  }
  FrameBuffer buf;
  std::vector<Message> out;
  size_t pos = 0;
  while (pos < stream.size()) {
    size_t n = std::min<size_t>(1 + rng() % 40, stream.size() - pos);
    buf.append(stream.data() + pos, n);
    pos += n;
    while (auto body = buf.next_body()) out.push_back(decode_body(*body));
  }
  EXPECT_EQ(buf.buffered(), 0u);
  ASSERT_EQ(out.size(), msgs.size());
  for (size_t i = 0; i < msgs.size(); ++i) EXPECT_EQ(out[i], msgs[i]);
}

TEST(FrameBufferTest, DecodeReadsOnlyFirstFrame) {
  std::string two = encode(SealMsg{}) + encode(ShutdownMsg{});
  EXPECT_EQ(type_of(decode(two)), MessageType::kSeal);
  EXPECT_EQ(*complete_frame_size(two), encode(SealMsg{}).size());
}

TEST(ErrorCodeTest, NamesRoundTrip) {
  for (int c = 0; c <= static_cast<int>(ErrorCode::kProtocolError); ++c) {
    auto code = static_cast<ErrorCode>(c);
    EXPECT_EQ(error_code_from_string(to_string(code)), code);
  }
  EXPECT_EQ(error_code_from_string("Bogus"), ErrorCode::kProtocolError);
}

}  // namespace
}  // namespace timewarp
