#define DOCTEST_CONFIG_IMPLEMENT

#include <doctest.h>

#include "simrec/log.hpp"

int main(int argc, char** argv) {
    simrec::Logger::instance().set_mode(simrec::LogMode::Silent);
    return doctest::Context(argc, argv).run();
}
