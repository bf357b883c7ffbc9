#pragma once

#include <iostream>
#include <string>
#include <utility>
#include <vector>

namespace simrec {

enum class LogMode { Json, Human, Silent };

/// One structured log line per event. JSON mode emits machine-parsable
/// records on stderr; Human mode emits a terse "event key=value" line.
class Logger {
public:
    static Logger& instance();

    void set_mode(LogMode m) { mode_ = m; }
    LogMode mode() const { return mode_; }

    using Field = std::pair<std::string, std::string>;

    void event(const std::string& name, const std::vector<Field>& fields = {},
               const std::string& level = "info");

    void error(const std::string& name, const std::string& message);

private:
    LogMode mode_ = LogMode::Human;
};

}  // namespace simrec
