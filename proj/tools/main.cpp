#include "bitsift/commands.hpp"

int main(int argc, char** argv) {
    return bitsift::run_cli(argc, argv);
}
