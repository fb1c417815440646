#pragma once

#include <stdexcept>
#include <string>

namespace invarmon {

/// Base class for every error raised by the simulator.
class error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Physical access outside of guest memory.
class bounds_error : public error
{
public:
  using error::error;
};

/// Virtual address without a page mapping.
class translation_fault : public error
{
public:
  using error::error;
};

/// Guest write through a read-only mapping.
class protection_fault : public error
{
public:
  using error::error;
};

/// Operation invoked in the wrong phase (e.g. trusted module used after boot).
class lifecycle_error : public error
{
public:
  using error::error;
};

/// Hypercall arriving after the monitor closed its boot gate.
class registration_closed : public error
{
public:
  using error::error;
};

/// Malformed registration (empty batch, oversized object, ...).
class registration_error : public error
{
public:
  using error::error;
};

/// Guest population does not fit into the configured memory.
class allocation_error : public error
{
public:
  using error::error;
};

/// Rejected attack script (no-op rogue value, out-of-range slot, ...).
class attack_error : public error
{
public:
  using error::error;
};

/// Scenario configuration error. `field()` is the dotted path of the offending key.
class config_error : public error
{
public:
  config_error(std::string field, const std::string& message)
    : error(field.empty() ? message : field + ": " + message)
    , field_(std::move(field))
  {}

  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

} // namespace invarmon
