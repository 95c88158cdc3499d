"""Config, supervision, seeding, and the command line."""
