#pragma once

#include <sstream>
#include <string>

namespace quadplan {
namespace log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Threshold comes from QUADPLAN_LOG (error|warn|info|debug), default warn.
Level threshold();
void setThreshold(Level lv);
void write(Level lv, const std::string& msg);

}  // namespace log
}  // namespace quadplan

#define QP_LOG(lv, expr)                                   \
  do {                                                     \
    if (static_cast<int>(lv) <=                            \
        static_cast<int>(::quadplan::log::threshold())) {  \
      std::ostringstream qp_log_os;                        \
      qp_log_os << expr;                                   \
      ::quadplan::log::write(lv, qp_log_os.str());         \
    }                                                      \
  } while (0)

#define QP_ERROR(expr) QP_LOG(::quadplan::log::Level::Error, expr)
#define QP_WARN(expr) QP_LOG(::quadplan::log::Level::Warn, expr)
#define QP_INFO(expr) QP_LOG(::quadplan::log::Level::Info, expr)
#define QP_DEBUG(expr) QP_LOG(::quadplan::log::Level::Debug, expr)
