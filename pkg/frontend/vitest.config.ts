import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the conformance suite boots a real service process and waits on TTLs
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
