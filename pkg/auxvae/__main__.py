"""Run the auxvae command line with ``python -m auxvae``."""

from auxvae.cli import app


def main():
    app(prog_name="auxvae")


if __name__ == "__main__":
    main()
