import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    testTimeout: 30000,
    hookTimeout: 30000,
    include: ["tests/**/*.test.ts"]
  }
});
