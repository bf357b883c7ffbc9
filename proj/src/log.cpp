#include "simrec/log.hpp"

#include <json.hpp>

namespace simrec {

Logger& Logger::instance() {
    static Logger logger;
    return logger;
}

void Logger::event(const std::string& name, const std::vector<Field>& fields,
                   const std::string& level) {
    if (mode_ == LogMode::Silent) return;
    if (mode_ == LogMode::Json) {
        nlohmann::json j;
        j["event"] = name;
        j["level"] = level;
        for (const auto& [k, v] : fields) j[k] = v;
        std::cerr << j.dump() << '\n';
    } else {
        std::cerr << name;
        for (const auto& [k, v] : fields) std::cerr << ' ' << k << '=' << v;
        std::cerr << '\n';
    }
}

void Logger::error(const std::string& name, const std::string& message) {
    event(name, {{"message", message}}, "error");
}

}  // namespace simrec
