#pragma once

// OCPP-J codec for the two calls that carry charging settings, and the
// man-in-the-middle rewrite that substitutes manipulated settings in transit.

#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

#include "evcma/attack.hpp"
#include "evcma/error.hpp"
#include "evcma/fleet.hpp"

namespace evcma {

enum class ProtocolErrc {
  kMalformedJson = 1,
  kArity = 2,
  kUnknownAction = 3,
  kSchema = 4,
};

std::string to_string(ProtocolErrc code);

class ProtocolError : public Error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& msg);
  ProtocolErrc code() const noexcept { return code_; }

 private:
  ProtocolErrc code_;
};

inline constexpr int kOcppCall = 2;

struct ChargingPreferences {
  std::string start_time;  // HH:MM
  std::string end_time;    // HH:MM
  double requested_kwh = 0.0;
};

struct StartTransactionReq {
  int connector_id = 1;
  std::string id_tag;
  std::string timestamp;  // ISO-8601
  ChargingPreferences prefs;
};

struct ChargingSchedule {
  std::string start_time;
  std::string end_time;
  double requested_kwh = 0.0;
  std::string charging_rate_unit = "W";  // "W" | "A"
};

struct SetChargingProfileReq {
  int connector_id = 1;
  int profile_id = 1;
  int stack_level = 0;
  std::string purpose = "TxProfile";  // "TxDefaultProfile" | "TxProfile"
  ChargingSchedule schedule;
};

using Payload = std::variant<StartTransactionReq, SetChargingProfileReq>;

struct Frame {
  int message_type = kOcppCall;
  std::string unique_id;
  Payload payload;
  /// Payload as received; fields outside the typed view are re-emitted verbatim.
  nlohmann::json raw = nlohmann::json::object();

  std::string action() const;
  int connector_id() const;
};

/// Throws ProtocolError with a distinct code per failure class; never returns a
/// partially filled frame.
Frame decode(std::string_view bytes);

/// Canonical OCPP-J text: sorted keys, no insignificant whitespace. Typed fields
/// are written back into the raw payload only where they differ from it.
std::string encode(const Frame& frame);

/// EVCP identity of a frame is the decimal connector id.
std::string evcp_id_of(const Frame& frame);

/// Charging settings of the frame as a request on `grid`.
ChargingRequest to_request(const Frame& frame, const SlotGrid& grid);

/// Rewrites the three charging settings to (s̄t, ēt, d̄) and leaves everything
/// else, unique id included, untouched. A time whose slot is unchanged keeps its
/// original text. Throws Error(kIdMismatch) when `manipulated` targets another EVCP.
Frame mitm_transform(const Frame& frame, const ManipulatedRequest& manipulated,
                     const SlotGrid& grid);

Frame make_start_transaction(std::string unique_id, StartTransactionReq req);
Frame make_set_charging_profile(std::string unique_id, SetChargingProfileReq req);

}  // namespace evcma
