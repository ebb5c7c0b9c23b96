#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace persona {

/// Caller violated an operation's precondition.
class ArgumentError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
  public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), m_line(line)
    {}
    std::size_t line() const noexcept { return m_line; }

  private:
    std::size_t m_line;
};

/// A scoring backend failed. `payload` holds whatever raw bytes the backend produced.
class BackendError : public std::runtime_error {
  public:
    BackendError(const std::string& what, std::string payload = {})
        : std::runtime_error(payload.empty() ? what : what + " (payload: " + payload + ")"),
          m_payload(std::move(payload))
    {}
    const std::string& payload() const noexcept { return m_payload; }

  private:
    std::string m_payload;
};

class RetrievalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
  public:
    TrainingError(std::size_t step, const std::string& what)
        : std::runtime_error("step " + std::to_string(step) + ": " + what), m_step(step)
    {}
    std::size_t step() const noexcept { return m_step; }

  private:
    std::size_t m_step;
};

class ConfigError : public std::runtime_error {
  public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key + ": " + what), m_key(std::move(key))
    {}
    const std::string& key() const noexcept { return m_key; }

  private:
    std::string m_key;
};

/// JSONL record failed schema validation.
class SchemaError : public std::runtime_error {
  public:
    SchemaError(std::size_t line, std::string key, const std::string& what)
        : std::runtime_error(
            "line " + std::to_string(line) + ", key '" + key + "': " + what),
          m_line(line), m_key(std::move(key))
    {}
    std::size_t line() const noexcept { return m_line; }
    const std::string& key() const noexcept { return m_key; }

  private:
    std::size_t m_line;
    std::string m_key;
};

/// A pipeline stage is missing the artifacts of a stage it depends on.
class DependencyError : public std::runtime_error {
  public:
    DependencyError(std::string prerequisite, const std::string& what)
        : std::runtime_error(what + " (run stage '" + prerequisite + "' first)"),
          m_prerequisite(std::move(prerequisite))
    {}
    const std::string& prerequisite() const noexcept { return m_prerequisite; }

  private:
    std::string m_prerequisite;
};

}  // namespace persona
