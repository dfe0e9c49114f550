#include "nnmr/cli/commands.hpp"

int main(int argc, char** argv) {
	return nnmr::cli::run(argc, argv);
}
