#include "evcma/protocol.hpp"

#include <cmath>
#include <regex>

namespace evcma {
namespace {

using nlohmann::json;

[[noreturn]] void schema(const std::string& msg) { throw ProtocolError(ProtocolErrc::kSchema, msg); }

const json& field(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) schema(where + ": missing '" + key + "'");
  return *it;
}

const json& object_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_object()) schema(where + "." + key + " must be an object");
  return v;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_string()) schema(where + "." + key + " must be a string");
  return v.get<std::string>();
}

long long int_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_number_integer()) schema(where + "." + key + " must be an integer");
  return v.get<long long>();
}

double number_field(const json& obj, const char* key, const std::string& where) {
  const auto& v = field(obj, key, where);
  if (!v.is_number()) schema(where + "." + key + " must be a number");
  return v.get<double>();
}

int connector_field(const json& obj, const std::string& where) {
  const auto id = int_field(obj, "connectorId", where);
  if (id < 1 || id > 1'000'000'000) schema(where + ".connectorId must be >= 1");
  return static_cast<int>(id);
}

std::string time_field(const json& obj, const char* key, const std::string& where) {
  auto s = string_field(obj, key, where);
  try {
    (void)time_to_slot(s, SlotGrid{});
  } catch (const Error&) {
    schema(where + "." + key + " is not a valid HH:MM time: '" + s + "'");
  }
  return s;
}

double kwh_field(const json& obj, const std::string& where) {
  const double kwh = number_field(obj, "requestedKwh", where);
  if (!(kwh > 0.0) || !std::isfinite(kwh)) schema(where + ".requestedKwh must be > 0");
  return kwh;
}

bool iso8601(const std::string& s) {
  static const std::regex re(
      R"(^\d{4}-(0[1-9]|1[0-2])-(0[1-9]|[12]\d|3[01])T([01]\d|2[0-3]):[0-5]\d:[0-5]\d(\.\d{1,9})?(Z|[+-]([01]\d|2[0-3]):[0-5]\d)$)");
  return std::regex_match(s, re);
}

StartTransactionReq parse_start(const json& p) {
  const std::string w = "StartTransaction";
  StartTransactionReq r;
  r.connector_id = connector_field(p, w);
  r.id_tag = string_field(p, "idTag", w);
  if (r.id_tag.empty() || r.id_tag.size() > 20) schema(w + ".idTag must have 1..20 characters");
  r.timestamp = string_field(p, "timestamp", w);
  if (!iso8601(r.timestamp)) schema(w + ".timestamp is not ISO-8601: '" + r.timestamp + "'");
  const auto& cp = object_field(p, "chargingPreferences", w);
  const std::string wc = w + ".chargingPreferences";
  r.prefs.start_time = time_field(cp, "startTime", wc);
  r.prefs.end_time = time_field(cp, "endTime", wc);
  r.prefs.requested_kwh = kwh_field(cp, wc);
  return r;
}

SetChargingProfileReq parse_profile(const json& p) {
  const std::string w = "SetChargingProfile";
  SetChargingProfileReq r;
  r.connector_id = connector_field(p, w);
  const auto& prof = object_field(p, "csChargingProfiles", w);
  const std::string wp = w + ".csChargingProfiles";
  r.profile_id = static_cast<int>(int_field(prof, "chargingProfileId", wp));
  r.stack_level = static_cast<int>(int_field(prof, "stackLevel", wp));
  if (r.stack_level < 0) schema(wp + ".stackLevel must be >= 0");
  r.purpose = string_field(prof, "chargingProfilePurpose", wp);
  if (r.purpose != "TxDefaultProfile" && r.purpose != "TxProfile") {
    schema(wp + ".chargingProfilePurpose must be TxDefaultProfile or TxProfile");
  }
  const auto& sch = object_field(prof, "chargingSchedule", wp);
  const std::string ws = wp + ".chargingSchedule";
  r.schedule.start_time = time_field(sch, "startTime", ws);
  r.schedule.end_time = time_field(sch, "endTime", ws);
  r.schedule.requested_kwh = kwh_field(sch, ws);
  r.schedule.charging_rate_unit = string_field(sch, "chargingRateUnit", ws);
  if (r.schedule.charging_rate_unit != "W" && r.schedule.charging_rate_unit != "A") {
    schema(ws + ".chargingRateUnit must be W or A");
  }
  if (const auto it = sch.find("chargingSchedulePeriod"); it != sch.end() && !it->is_array()) {
    schema(ws + ".chargingSchedulePeriod must be an array");
  }
  return r;
}

json number_value(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9.0e15) {
    return json(static_cast<long long>(v));
  }
  return json(v);
}

void put_string(json& obj, const char* key, const std::string& v) {
  if (!obj.contains(key) || !obj[key].is_string() || obj[key].get<std::string>() != v) obj[key] = v;
}

void put_int(json& obj, const char* key, long long v) {
  if (!obj.contains(key) || !obj[key].is_number_integer() || obj[key].get<long long>() != v) {
    obj[key] = v;
  }
}

void put_number(json& obj, const char* key, double v) {
  if (!obj.contains(key) || !obj[key].is_number() || obj[key].get<double>() != v) {
    obj[key] = number_value(v);
  }
}

json& put_object(json& obj, const char* key) {
  if (!obj.contains(key) || !obj[key].is_object()) obj[key] = json::object();
  return obj[key];
}

json payload_json(const Frame& f) {
  json p = f.raw.is_object() ? f.raw : json::object();
  if (const auto* st = std::get_if<StartTransactionReq>(&f.payload)) {
    put_int(p, "connectorId", st->connector_id);
    put_string(p, "idTag", st->id_tag);
    put_string(p, "timestamp", st->timestamp);
    auto& cp = put_object(p, "chargingPreferences");
    put_string(cp, "startTime", st->prefs.start_time);
    put_string(cp, "endTime", st->prefs.end_time);
    put_number(cp, "requestedKwh", st->prefs.requested_kwh);
  } else {
    const auto& sp = std::get<SetChargingProfileReq>(f.payload);
    put_int(p, "connectorId", sp.connector_id);
    auto& prof = put_object(p, "csChargingProfiles");
    put_int(prof, "chargingProfileId", sp.profile_id);
    put_int(prof, "stackLevel", sp.stack_level);
    put_string(prof, "chargingProfilePurpose", sp.purpose);
    auto& sch = put_object(prof, "chargingSchedule");
    put_string(sch, "startTime", sp.schedule.start_time);
    put_string(sch, "endTime", sp.schedule.end_time);
    put_number(sch, "requestedKwh", sp.schedule.requested_kwh);
    put_string(sch, "chargingRateUnit", sp.schedule.charging_rate_unit);
  }
  return p;
}

std::string rewrite_time(const std::string& original, Slot target, const SlotGrid& grid) {
  if (time_to_slot(original, grid) == target) return original;
  return slot_to_time(target, grid);
}

}  // namespace

std::string to_string(ProtocolErrc code) {
  switch (code) {
    case ProtocolErrc::kMalformedJson: return "malformed_json";
    case ProtocolErrc::kArity: return "arity";
    case ProtocolErrc::kUnknownAction: return "unknown_action";
    case ProtocolErrc::kSchema: return "schema";
  }
  return "unknown";
}

ProtocolError::ProtocolError(ProtocolErrc code, const std::string& msg)
    : Error(ErrorKind::kProtocol, to_string(code) + ": " + msg), code_(code) {}

std::string Frame::action() const {
  return std::holds_alternative<StartTransactionReq>(payload) ? "StartTransaction"
                                                              : "SetChargingProfile";
}

int Frame::connector_id() const {
  return std::visit([](const auto& p) { return p.connector_id; }, payload);
}

Frame decode(std::string_view bytes) {
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ProtocolError(ProtocolErrc::kMalformedJson, e.what());
  }
  if (!doc.is_array()) throw ProtocolError(ProtocolErrc::kArity, "OCPP-J message must be an array");
  if (doc.size() != 4) {
    throw ProtocolError(ProtocolErrc::kArity,
                        "CALL must have 4 elements, got " + std::to_string(doc.size()));
  }
  if (!doc[0].is_number_integer() || doc[0].get<long long>() != kOcppCall) {
    schema("message type must be 2 (CALL)");
  }
  if (!doc[1].is_string()) schema("unique id must be a string");
  const auto uid = doc[1].get<std::string>();
  if (uid.empty() || uid.size() > 36) schema("unique id must have 1..36 characters");
  if (!doc[2].is_string()) schema("action must be a string");
  const auto action = doc[2].get<std::string>();
  if (action != "StartTransaction" && action != "SetChargingProfile") {
    throw ProtocolError(ProtocolErrc::kUnknownAction, "unsupported action '" + action + "'");
  }
  if (!doc[3].is_object()) schema("payload must be an object");

  Frame f;
  f.unique_id = uid;
  if (action == "StartTransaction") {
    f.payload = parse_start(doc[3]);
  } else {
    f.payload = parse_profile(doc[3]);
  }
  f.raw = std::move(doc[3]);
  return f;
}

std::string encode(const Frame& frame) {
  json doc = json::array({frame.message_type, frame.unique_id, frame.action(), payload_json(frame)});
  return doc.dump();
}

std::string evcp_id_of(const Frame& frame) { return std::to_string(frame.connector_id()); }

ChargingRequest to_request(const Frame& frame, const SlotGrid& grid) {
  ChargingRequest r;
  r.evcp_id = evcp_id_of(frame);
  if (const auto* st = std::get_if<StartTransactionReq>(&frame.payload)) {
    r.start_slot = time_to_slot(st->prefs.start_time, grid);
    r.end_slot = time_to_slot(st->prefs.end_time, grid);
    r.demand_kwh = st->prefs.requested_kwh;
  } else {
    const auto& sp = std::get<SetChargingProfileReq>(frame.payload);
    r.start_slot = time_to_slot(sp.schedule.start_time, grid);
    r.end_slot = time_to_slot(sp.schedule.end_time, grid);
    r.demand_kwh = sp.schedule.requested_kwh;
  }
  return r;
}

Frame mitm_transform(const Frame& frame, const ManipulatedRequest& manipulated,
                     const SlotGrid& grid) {
  const auto id = evcp_id_of(frame);
  if (manipulated.request.evcp_id != id) {
    throw Error(ErrorKind::kIdMismatch, "manipulation for '" + manipulated.request.evcp_id +
                                            "' applied to connector " + id);
  }
  validate(manipulated.request, grid);
  Frame out = frame;
  const auto& m = manipulated.request;
  const auto rewrite = [&](std::string& start, std::string& end, double& kwh) {
    start = rewrite_time(start, m.start_slot, grid);
    end = rewrite_time(end, m.end_slot, grid);
    kwh = m.demand_kwh;
  };
  if (auto* st = std::get_if<StartTransactionReq>(&out.payload)) {
    rewrite(st->prefs.start_time, st->prefs.end_time, st->prefs.requested_kwh);
  } else {
    auto& s = std::get<SetChargingProfileReq>(out.payload).schedule;
    rewrite(s.start_time, s.end_time, s.requested_kwh);
  }
  return out;
}

Frame make_start_transaction(std::string unique_id, StartTransactionReq req) {
  Frame f;
  f.unique_id = std::move(unique_id);
  f.payload = std::move(req);
  return decode(encode(f));
}

Frame make_set_charging_profile(std::string unique_id, SetChargingProfileReq req) {
  Frame f;
  f.unique_id = std::move(unique_id);
  f.payload = std::move(req);
  return decode(encode(f));
}

}  // namespace evcma
